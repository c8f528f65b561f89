//! SD-map priors for vectorized map decoding.
//!
//! OSM XML is parsed ([`osm`]) and cut into ego-centred SD frames
//! ([`frame`]). Tag sets are bucketed by their relevant subset ([`corpus`])
//! and embedded by a contrastively pretrained transformer ([`text`]). Frames
//! become token sets with positional encodings and orthogonal element
//! identifiers ([`sdenc`]). A synthetic decoding benchmark ([`toy`]) and
//! Chamfer AP ([`metrics`]) measure what the tags contribute. All models run
//! on the small `f64` autodiff engine in [`tensor`].
//!
//! The book under `book/` walks through each stage; its snippets are
//! compiled and run as doc-tests.

pub mod augment;
pub mod corpus;
pub mod error;
pub mod frame;
pub mod geom;
pub mod metrics;
pub mod nn;
pub mod osm;
pub mod rng;
pub mod sdenc;
pub mod tags;
pub mod tensor;
pub mod text;
pub mod toy;

pub use error::{Error, Result};
pub use tags::TagSet;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/overview.md")]
    mod overview {}
    #[doc = include_str!("../../../book/src/autodiff.md")]
    mod autodiff {}
    #[doc = include_str!("../../../book/src/osm.md")]
    mod osm {}
    #[doc = include_str!("../../../book/src/corpus.md")]
    mod corpus {}
    #[doc = include_str!("../../../book/src/text-encoder.md")]
    mod text_encoder {}
    #[doc = include_str!("../../../book/src/sd-encoder.md")]
    mod sd_encoder {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/toy-task.md")]
    mod toy_task {}
    #[doc = include_str!("../../../book/src/augment.md")]
    mod augment {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
