//! Synthetic end-to-end benchmark: scenes whose lane layout is only known
//! from tags, a cross-attention map decoder, bipartite matching and
//! training in the four tag modes.

mod decoder;
pub mod matching;
mod scene;
mod train;

pub use decoder::{predictions, ToyDecoder, ToyDecoderConfig, LOGITS};
pub use matching::{hungarian, match_scene, set_loss, MatchConfig, SetLoss};
pub use scene::{
    build_scene, generate_scene, generate_scenes, read_scenes_jsonl, road_ground_truth, road_sd_polyline, road_tags,
    write_scenes_jsonl, RoadParams, Scene, SceneSpec,
};
pub use train::{
    eval_orf_seed, init_toy, lr_at, metrics_csv, train_toy, EpochLog, Mode, TagCache, TextPart, ToyConfig, ToyModel,
    ToyNet, ToyRun, ToyStep,
};
