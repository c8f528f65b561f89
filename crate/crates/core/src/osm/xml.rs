//! OSM v0.6 XML reading and writing.

use std::collections::HashSet;
use std::fmt::Write as _;

use quick_xml::events::{BytesStart, Event};
use quick_xml::Reader;

use super::{ElementKind, Member, OsmElement, OsmGeometry};
use crate::error::{Error, Result};
use crate::tags::TagSet;

struct Pending {
    id: i64,
    start: usize,
    tags: Vec<(String, String)>,
    geometry: OsmGeometry,
}

fn parse_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        offset,
        message: message.into(),
    }
}

fn attrs(e: &BytesStart, at: usize) -> Result<Vec<(String, String)>> {
    e.attributes()
        .map(|a| {
            let a = a.map_err(|err| parse_err(at, err.to_string()))?;
            let key = std::str::from_utf8(a.key.as_ref())
                .map_err(|_| parse_err(at, "attribute name is not UTF-8"))?
                .to_string();
            let value = a
                .unescape_value()
                .map_err(|err| parse_err(at, err.to_string()))?
                .into_owned();
            Ok((key, value))
        })
        .collect()
}

fn attr<'a>(list: &'a [(String, String)], key: &str) -> Option<&'a str> {
    list.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
}

fn required<T: std::str::FromStr>(list: &[(String, String)], key: &str, elem: &str, at: usize) -> Result<T> {
    let raw = attr(list, key).ok_or_else(|| parse_err(at, format!("<{elem}> lacks `{key}`")))?;
    raw.parse()
        .map_err(|_| parse_err(at, format!("<{elem}> has invalid `{key}`: {raw:?}")))
}

/// Parses an OSM XML document. Elements come back in document order.
pub fn parse_osm_xml(bytes: &[u8]) -> Result<Vec<OsmElement>> {
    let mut reader = Reader::from_reader(bytes);
    let mut buf = Vec::new();
    let mut out = Vec::new();
    let mut pending: Option<Pending> = None;
    let mut depth = 0usize;
    let mut saw_root = false;

    loop {
        let at = reader.buffer_position() as usize;
        let event = match reader.read_event_into(&mut buf) {
            Ok(ev) => ev,
            // Every syntax error quick-xml reports means the input ended
            // inside a construct.
            Err(quick_xml::Error::Syntax(e)) => return Err(parse_err(bytes.len(), e.to_string())),
            Err(e) => return Err(parse_err(reader.error_position() as usize, e.to_string())),
        };
        match event {
            Event::Start(ref e) | Event::Empty(ref e) => {
                let empty = matches!(event, Event::Empty(_));
                let name = e.name();
                let name = std::str::from_utf8(name.as_ref()).unwrap_or("");
                if depth == 0 {
                    if name != "osm" {
                        return Err(parse_err(at, format!("expected <osm> root, found <{name}>")));
                    }
                    saw_root = true;
                } else if depth == 1 {
                    let list = attrs(e, at)?;
                    let geometry = match name {
                        "node" => Some(OsmGeometry::Node {
                            lon: required(&list, "lon", name, at)?,
                            lat: required(&list, "lat", name, at)?,
                        }),
                        "way" => Some(OsmGeometry::Way { nodes: Vec::new() }),
                        "relation" => Some(OsmGeometry::Relation { members: Vec::new() }),
                        _ => None,
                    };
                    if let Some(geometry) = geometry {
                        pending = Some(Pending {
                            id: required(&list, "id", name, at)?,
                            start: at,
                            tags: Vec::new(),
                            geometry,
                        });
                    }
                } else if depth == 2 {
                    if let Some(p) = pending.as_mut() {
                        let list = attrs(e, at)?;
                        match (name, &mut p.geometry) {
                            ("tag", _) => {
                                let k: String = required(&list, "k", name, at)?;
                                let v: String = required(&list, "v", name, at)?;
                                p.tags.push((k, v));
                            }
                            ("nd", OsmGeometry::Way { nodes }) => nodes.push(required(&list, "ref", name, at)?),
                            ("member", OsmGeometry::Relation { members }) => {
                                let kind_raw: String = required(&list, "type", name, at)?;
                                let kind = ElementKind::parse(&kind_raw)
                                    .ok_or_else(|| parse_err(at, format!("unknown member type {kind_raw:?}")))?;
                                members.push(Member {
                                    kind,
                                    id: required(&list, "ref", name, at)?,
                                    role: attr(&list, "role").unwrap_or("").to_string(),
                                });
                            }
                            _ => {}
                        }
                    }
                }
                if empty {
                    if depth == 1 {
                        finish(&mut pending, &mut out)?;
                    }
                } else {
                    depth += 1;
                }
            }
            Event::End(_) => {
                depth -= 1;
                if depth == 1 {
                    finish(&mut pending, &mut out)?;
                }
            }
            Event::Eof => break,
            _ => {}
        }
        buf.clear();
    }
    if depth > 0 || !saw_root {
        return Err(parse_err(bytes.len(), "document ended before </osm>"));
    }
    check_way_refs(&out)?;
    Ok(out)
}

fn finish(pending: &mut Option<Pending>, out: &mut Vec<OsmElement>) -> Result<()> {
    let Some(p) = pending.take() else {
        return Ok(());
    };
    let tags = TagSet::from_pairs(p.tags).map_err(|e| parse_err(p.start, e.to_string()))?;
    match &p.geometry {
        OsmGeometry::Way { nodes } if nodes.len() < 2 => {
            return Err(parse_err(p.start, format!("way {} has fewer than 2 nodes", p.id)));
        }
        OsmGeometry::Relation { members } if members.is_empty() => {
            return Err(parse_err(p.start, format!("relation {} has no members", p.id)));
        }
        _ => {}
    }
    out.push(OsmElement {
        id: p.id,
        tags,
        geometry: p.geometry,
    });
    Ok(())
}

fn check_way_refs(elements: &[OsmElement]) -> Result<()> {
    let nodes: HashSet<i64> = elements
        .iter()
        .filter(|e| e.kind() == ElementKind::Node)
        .map(|e| e.id)
        .collect();
    for e in elements {
        if let OsmGeometry::Way { nodes: refs } = &e.geometry {
            if let Some(&missing) = refs.iter().find(|r| !nodes.contains(r)) {
                return Err(Error::DanglingReference {
                    way: e.id,
                    node: missing,
                });
            }
        }
    }
    Ok(())
}

fn esc(s: &str) -> std::borrow::Cow<'_, str> {
    quick_xml::escape::escape(s)
}

fn write_tags(out: &mut String, tags: &TagSet) {
    for (k, v) in tags.iter() {
        let _ = writeln!(out, "    <tag k=\"{}\" v=\"{}\"/>", esc(k), esc(v));
    }
}

/// Serializes elements as an OSM v0.6 document in the given order.
/// Coordinates use the shortest representation that reads back exactly.
pub fn write_osm_xml(elements: &[OsmElement]) -> String {
    let mut out = String::new();
    out.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    out.push_str("<osm version=\"0.6\" generator=\"sdprior\">\n");
    for e in elements {
        match &e.geometry {
            OsmGeometry::Node { lon, lat } => {
                let _ = write!(out, "  <node id=\"{}\" lat=\"{lat:?}\" lon=\"{lon:?}\"", e.id);
                if e.tags.is_empty() {
                    out.push_str("/>\n");
                } else {
                    out.push_str(">\n");
                    write_tags(&mut out, &e.tags);
                    out.push_str("  </node>\n");
                }
            }
            OsmGeometry::Way { nodes } => {
                let _ = writeln!(out, "  <way id=\"{}\">", e.id);
                for n in nodes {
                    let _ = writeln!(out, "    <nd ref=\"{n}\"/>");
                }
                write_tags(&mut out, &e.tags);
                out.push_str("  </way>\n");
            }
            OsmGeometry::Relation { members } => {
                let _ = writeln!(out, "  <relation id=\"{}\">", e.id);
                for m in members {
                    let _ = writeln!(
                        out,
                        "    <member type=\"{}\" ref=\"{}\" role=\"{}\"/>",
                        m.kind.as_str(),
                        m.id,
                        esc(&m.role)
                    );
                }
                write_tags(&mut out, &e.tags);
                out.push_str("  </relation>\n");
            }
        }
    }
    out.push_str("</osm>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = r#"<?xml version="1.0"?>
<osm version="0.6">
  <bounds minlat="0" minlon="0" maxlat="1" maxlon="1"/>
  <node id="1" lat="0.0" lon="0.0" version="3" user="x">
    <tag k="highway" v="traffic_signals"/>
  </node>
  <node id="2" lat="0.0" lon="0.001"/>
  <way id="10"><nd ref="1"/><nd ref="2"/><tag k="name" v="A &amp; B"/></way>
</osm>"#;

    #[test]
    fn counts_and_tags() {
        let els = parse_osm_xml(SMALL.as_bytes()).unwrap();
        assert_eq!(els.len(), 3);
        assert_eq!(
            els[0].tags,
            TagSet::from_pairs([("highway", "traffic_signals")]).unwrap()
        );
        assert_eq!(els[2].geometry, OsmGeometry::Way { nodes: vec![1, 2] });
        assert_eq!(els[2].tags.get("name"), Some("A & B"));
    }

    #[test]
    fn truncation_reports_end_offset() {
        for cut in [40, SMALL.len() / 2, SMALL.len() - 3] {
            let err = parse_osm_xml(&SMALL.as_bytes()[..cut]).unwrap_err();
            assert!(
                matches!(err, Error::Parse { offset, .. } if offset == cut),
                "cut {cut}: {err}"
            );
        }
    }

    #[test]
    fn dangling_way_reference() {
        let doc = r#"<osm><node id="1" lat="0" lon="0"/><way id="5"><nd ref="1"/><nd ref="9"/></way></osm>"#;
        let err = parse_osm_xml(doc.as_bytes()).unwrap_err();
        assert!(matches!(err, Error::DanglingReference { way: 5, node: 9 }), "{err}");
    }

    #[test]
    fn mismatched_end_tag_is_a_parse_error() {
        let doc = r#"<osm><node id="1" lat="0" lon="0"></way></osm>"#;
        assert!(matches!(parse_osm_xml(doc.as_bytes()), Err(Error::Parse { .. })));
    }

    #[test]
    fn write_then_parse_is_identity() {
        let els = parse_osm_xml(SMALL.as_bytes()).unwrap();
        let text = write_osm_xml(&els);
        assert_eq!(parse_osm_xml(text.as_bytes()).unwrap(), els);
    }
}
