//! Interleaved image-text documents and the image-repositioning transform.
//!
//! Inline form: text with images written as `<img>SOURCE</img>` where they
//! occur. Leading form: one header line `<|image_k|> <img>SOURCE</img>` per
//! image (k from 0, in order), a newline, then the text with the k-th image
//! replaced by `<|image_k|>`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::keyed_rng;

const IMG_OPEN: &str = "<img>";
const IMG_CLOSE: &str = "</img>";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Segment {
    Text(String),
    Image(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    #[default]
    Inline,
    Leading,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct InterleavedDoc {
    pub segments: Vec<Segment>,
    pub layout: Layout,
}

fn marker(k: usize) -> String {
    format!("<|image_{k}|>")
}

impl InterleavedDoc {
    pub fn new(segments: Vec<Segment>) -> Self {
        let mut doc = Self { segments: Vec::new(), layout: Layout::Inline };
        for s in segments {
            doc.push(s);
        }
        doc
    }

    /// Appends a segment, merging adjacent text and dropping empty text.
    fn push(&mut self, seg: Segment) {
        match (seg, self.segments.last_mut()) {
            (Segment::Text(t), _) if t.is_empty() => {}
            (Segment::Text(t), Some(Segment::Text(prev))) => prev.push_str(&t),
            (s, _) => self.segments.push(s),
        }
    }

    pub fn images(&self) -> impl Iterator<Item = &str> {
        self.segments.iter().filter_map(|s| match s {
            Segment::Image(src) => Some(src.as_str()),
            Segment::Text(_) => None,
        })
    }

    /// Parses either form; a leading header is recognized by its first line
    /// starting with `<|image_0|> <img>`.
    pub fn parse(text: &str) -> Result<Self> {
        if text.starts_with(&format!("{} {IMG_OPEN}", marker(0))) {
            Self::parse_leading(text)
        } else {
            Self::parse_inline(text)
        }
    }

    fn parse_inline(text: &str) -> Result<Self> {
        let mut doc = Self::default();
        let mut rest = text;
        while let Some(open) = rest.find(IMG_OPEN) {
            doc.push(Segment::Text(rest[..open].to_string()));
            let after = &rest[open + IMG_OPEN.len()..];
            let close = after.find(IMG_CLOSE).ok_or_else(|| Error::Format("unterminated <img> tag".into()))?;
            doc.push(Segment::Image(after[..close].to_string()));
            rest = &after[close + IMG_CLOSE.len()..];
        }
        if rest.contains(IMG_CLOSE) {
            return Err(Error::Format("stray </img> tag".into()));
        }
        doc.push(Segment::Text(rest.to_string()));
        Ok(doc)
    }

    fn parse_leading(text: &str) -> Result<Self> {
        let mut sources = Vec::new();
        let mut rest = text;
        loop {
            let prefix = format!("{} {IMG_OPEN}", marker(sources.len()));
            let Some(line_rest) = rest.strip_prefix(&prefix) else { break };
            let end = line_rest.find(IMG_CLOSE).ok_or_else(|| Error::Format("unterminated header image".into()))?;
            let after = line_rest[end + IMG_CLOSE.len()..]
                .strip_prefix('\n')
                .ok_or_else(|| Error::Format("header line must end with a newline".into()))?;
            sources.push(line_rest[..end].to_string());
            rest = after;
        }
        let mut doc = Self { segments: Vec::new(), layout: Layout::Leading };
        for (k, src) in sources.iter().enumerate() {
            let m = marker(k);
            let at = rest.find(&m).ok_or_else(|| Error::Format(format!("body is missing {m}")))?;
            doc.push(Segment::Text(rest[..at].to_string()));
            doc.push(Segment::Image(src.clone()));
            rest = &rest[at + m.len()..];
        }
        if rest.contains("<|image_") {
            return Err(Error::Format("body has more image markers than the header".into()));
        }
        doc.push(Segment::Text(rest.to_string()));
        Ok(doc)
    }

    /// Renders the document in its current layout.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        match self.layout {
            Layout::Inline => {
                for s in &self.segments {
                    match s {
                        Segment::Text(t) => out.push_str(t),
                        Segment::Image(src) => out.push_str(&format!("{IMG_OPEN}{src}{IMG_CLOSE}")),
                    }
                }
            }
            Layout::Leading => {
                for (k, src) in self.images().enumerate() {
                    out.push_str(&format!("{} {IMG_OPEN}{src}{IMG_CLOSE}\n", marker(k)));
                }
                let mut k = 0;
                for s in &self.segments {
                    match s {
                        Segment::Text(t) => out.push_str(t),
                        Segment::Image(_) => {
                            out.push_str(&marker(k));
                            k += 1;
                        }
                    }
                }
            }
        }
        out
    }
}

/// With probability `p` (one draw per document, keyed by `seed`) moves every
/// image to a leading header; documents without images are left as they are.
pub fn reposition_images(doc: &InterleavedDoc, p: f64, seed: u64) -> Result<InterleavedDoc> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidInput(format!("probability {p} outside [0, 1]")));
    }
    let mut rng = keyed_rng(seed, "reposition_images");
    let mut out = doc.clone();
    if rng.random_bool(p) && doc.images().next().is_some() {
        out.layout = Layout::Leading;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inline_round_trip() {
        let text = "a <img>x.png</img> b<img>y</img>";
        let doc = InterleavedDoc::parse(text).unwrap();
        assert_eq!(doc.images().collect::<Vec<_>>(), vec!["x.png", "y"]);
        assert_eq!(doc.serialize(), text);
    }

    #[test]
    fn leading_round_trip() {
        let doc = InterleavedDoc::parse("t <img>a</img> u <img>b</img>").unwrap();
        let moved = reposition_images(&doc, 1.0, 0).unwrap();
        let s = moved.serialize();
        assert_eq!(s, "<|image_0|> <img>a</img>\n<|image_1|> <img>b</img>\nt <|image_0|> u <|image_1|>");
        let back = InterleavedDoc::parse(&s).unwrap();
        assert_eq!(back, moved);
        assert_eq!(reposition_images(&back, 1.0, 9).unwrap().serialize(), s);
    }

    #[test]
    fn probability_edges() {
        let doc = InterleavedDoc::parse("t <img>a</img>").unwrap();
        assert_eq!(reposition_images(&doc, 0.0, 3).unwrap(), doc);
        let plain = InterleavedDoc::parse("no images here").unwrap();
        assert_eq!(reposition_images(&plain, 1.0, 3).unwrap().serialize(), "no images here");
        assert!(reposition_images(&doc, 1.5, 0).is_err());
    }

    #[test]
    fn malformed() {
        assert!(InterleavedDoc::parse("x <img>open").is_err());
        assert!(InterleavedDoc::parse("<|image_0|> <img>a</img>\nbody without marker").is_err());
    }
}
