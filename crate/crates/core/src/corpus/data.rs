use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::concepts::ConceptSet;
use crate::corpus::vocab::tokenize;
use crate::error::{DccError, Result};

/// Visual input: one feature vector (image) or a list of per-frame vectors (video).
#[derive(Clone, Debug, PartialEq)]
pub enum Visual {
    Features(Vec<f32>),
    Frames(Vec<Vec<f32>>),
}

impl Visual {
    pub fn feature_dim(&self) -> Option<usize> {
        match self {
            Visual::Features(f) => Some(f.len()),
            Visual::Frames(fr) => fr.first().map(|f| f.len()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairedExample {
    pub id: String,
    pub visual: Visual,
    /// Tokenized reference captions.
    pub captions: Vec<Vec<String>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct UnpairedImageExample {
    pub id: String,
    pub visual: Visual,
    pub labels: Vec<String>,
}

impl PairedExample {
    pub fn mentions(&self, word: &str) -> bool {
        self.captions.iter().any(|c| c.iter().any(|t| t == word))
    }
}

/// Binary label per concept row: 1 iff the concept word occurs in any caption.
pub fn derive_concept_labels(example: &PairedExample, concepts: &ConceptSet) -> Vec<f32> {
    let mut labels = vec![0.0; concepts.len()];
    for tok in example.captions.iter().flatten() {
        if let Some(r) = concepts.row(tok) {
            labels[r] = 1.0;
        }
    }
    labels
}

/// Label vector for an unpaired image; every label must be a concept.
pub fn label_vector(labels: &[String], concepts: &ConceptSet) -> Result<Vec<f32>> {
    let mut v = vec![0.0; concepts.len()];
    for l in labels {
        let r = concepts
            .row(l)
            .ok_or_else(|| DccError::validation(format!("label `{l}` is not a concept")))?;
        v[r] = 1.0;
    }
    Ok(v)
}

/// Splits off every example whose captions mention any held-out word.
/// Returns `(kept, removed)`.
pub fn build_heldout_split(
    paired: &[PairedExample],
    heldout: &[String],
) -> Result<(Vec<PairedExample>, Vec<PairedExample>)> {
    if heldout.is_empty() {
        return Err(DccError::validation("held-out word list is empty"));
    }
    Ok(paired.iter().cloned().partition(|ex| !heldout.iter().any(|w| ex.mentions(w))))
}

#[derive(Serialize, Deserialize)]
struct ExampleLine {
    id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    features: Option<Vec<f32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    frames: Option<Vec<Vec<f32>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    captions: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    labels: Option<Vec<String>>,
}

impl ExampleLine {
    fn new(id: &str, visual: &Visual) -> Self {
        let (features, frames) = match visual {
            Visual::Features(f) => (Some(f.clone()), None),
            Visual::Frames(fr) => (None, Some(fr.clone())),
        };
        ExampleLine { id: id.to_string(), features, frames, captions: None, labels: None }
    }

    fn visual(&mut self, line: usize) -> Result<Visual> {
        match (self.features.take(), self.frames.take()) {
            (Some(f), None) => Ok(Visual::Features(f)),
            (None, Some(fr)) => {
                if fr.is_empty() {
                    return Err(DccError::Parse { line, message: "empty frame list".into() });
                }
                if fr.iter().any(|f| f.len() != fr[0].len()) {
                    return Err(DccError::Parse { line, message: "frames have unequal lengths".into() });
                }
                Ok(Visual::Frames(fr))
            }
            _ => Err(DccError::Parse { line, message: "exactly one of `features` or `frames` required".into() }),
        }
    }
}

fn parse_lines(text: &str) -> Result<Vec<(usize, ExampleLine)>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map(|e| (i + 1, e))
                .map_err(|e| DccError::Parse { line: i + 1, message: e.to_string() })
        })
        .collect()
}

fn check_feature_dims<'a>(items: impl Iterator<Item = (&'a str, &'a Visual)>) -> Result<()> {
    let mut dim = None;
    for (id, v) in items {
        let d = v.feature_dim();
        match (dim, d) {
            (None, _) => dim = d,
            (Some(a), Some(b)) if a != b => {
                return Err(DccError::validation(format!(
                    "example `{id}` has feature length {b}, expected {a}"
                )))
            }
            _ => {}
        }
    }
    Ok(())
}

pub fn parse_paired(text: &str) -> Result<Vec<PairedExample>> {
    let mut out = Vec::new();
    for (line, mut raw) in parse_lines(text)? {
        let visual = raw.visual(line)?;
        let captions: Vec<Vec<String>> = raw.captions.take().unwrap_or_default().iter().map(|c| tokenize(c)).collect();
        if captions.is_empty() {
            return Err(DccError::Parse { line, message: format!("example `{}` has no captions", raw.id) });
        }
        out.push(PairedExample { id: raw.id, visual, captions });
    }
    check_feature_dims(out.iter().map(|e| (e.id.as_str(), &e.visual)))?;
    Ok(out)
}

pub fn parse_unpaired_images(text: &str) -> Result<Vec<UnpairedImageExample>> {
    let mut out = Vec::new();
    for (line, mut raw) in parse_lines(text)? {
        let visual = raw.visual(line)?;
        let labels = raw
            .labels
            .take()
            .ok_or_else(|| DccError::Parse { line, message: "missing `labels`".into() })?;
        out.push(UnpairedImageExample { id: raw.id, visual, labels });
    }
    check_feature_dims(out.iter().map(|e| (e.id.as_str(), &e.visual)))?;
    Ok(out)
}

pub fn load_paired(path: &Path) -> Result<Vec<PairedExample>> {
    parse_paired(&fs::read_to_string(path)?)
}

pub fn load_unpaired_images(path: &Path) -> Result<Vec<UnpairedImageExample>> {
    parse_unpaired_images(&fs::read_to_string(path)?)
}

fn write_lines(path: &Path, lines: impl Iterator<Item = ExampleLine>) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for l in lines {
        serde_json::to_writer(&mut w, &l)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_paired(examples: &[PairedExample], path: &Path) -> Result<()> {
    write_lines(
        path,
        examples.iter().map(|e| {
            let mut l = ExampleLine::new(&e.id, &e.visual);
            l.captions = Some(e.captions.iter().map(|c| c.join(" ")).collect());
            l
        }),
    )
}

pub fn save_unpaired_images(examples: &[UnpairedImageExample], path: &Path) -> Result<()> {
    write_lines(
        path,
        examples.iter().map(|e| {
            let mut l = ExampleLine::new(&e.id, &e.visual);
            l.labels = Some(e.labels.clone());
            l
        }),
    )
}

/// One tokenized sentence per non-empty line.
pub fn load_text(path: &Path) -> Result<Vec<Vec<String>>> {
    Ok(fs::read_to_string(path)?.lines().map(tokenize).filter(|s| !s.is_empty()).collect())
}

pub fn save_text(sentences: &[Vec<String>], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for s in sentences {
        writeln!(w, "{}", s.join(" "))?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_concepts(path: &Path) -> Result<ConceptSet> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

pub fn save_concepts(concepts: &ConceptSet, path: &Path) -> Result<()> {
    fs::write(path, concepts.to_json())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ex(id: &str, caps: &[&str]) -> PairedExample {
        PairedExample {
            id: id.into(),
            visual: Visual::Features(vec![0.0, 1.0]),
            captions: caps.iter().map(|c| tokenize(c)).collect(),
        }
    }

    fn concepts(words: &[&str]) -> ConceptSet {
        ConceptSet::new(words.iter().map(|w| (w.to_string(), false))).unwrap()
    }

    #[test]
    fn labels_from_any_caption() {
        let c = concepts(&["zebra", "pizza"]);
        assert_eq!(derive_concept_labels(&ex("1", &["a zebra in a field"]), &c), vec![1.0, 0.0]);
        let e = ex("2", &["a horse", "an animal", "a zebra", "grass", "a field"]);
        assert_eq!(derive_concept_labels(&e, &c), vec![1.0, 0.0]);
        assert_eq!(derive_concept_labels(&ex("3", &["a dog"]), &c), vec![0.0, 0.0]);
    }

    #[test]
    fn heldout_split_rules() {
        let data = vec![ex("1", &["a zebra grazing"]), ex("2", &["a giraffe grazing"]), ex("3", &["pizza slice"])];
        let held = vec!["zebra".to_string(), "pizza".to_string()];
        let (kept, removed) = build_heldout_split(&data, &held).unwrap();
        assert_eq!(kept.iter().map(|e| e.id.as_str()).collect::<Vec<_>>(), vec!["2"]);
        assert_eq!(removed.len(), 2);
        assert!(build_heldout_split(&data, &[]).is_err());
        // tokens, not substrings
        let (kept, _) = build_heldout_split(&[ex("4", &["zebras run"])], &held).unwrap();
        assert_eq!(kept.len(), 1);
    }

    #[test]
    fn paired_parse_errors_name_line() {
        let text = "{\"id\":\"a\",\"features\":[1.0],\"captions\":[\"x\"]}\n{\"id\":\"b\",\"feat";
        match parse_paired(text).unwrap_err() {
            DccError::Parse { line, .. } => assert_eq!(line, 2),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn inconsistent_feature_length_rejected() {
        let text = "{\"id\":\"a\",\"features\":[1.0],\"captions\":[\"x\"]}\n{\"id\":\"b\",\"features\":[1.0,2.0],\"captions\":[\"y\"]}";
        assert!(matches!(parse_paired(text).unwrap_err(), DccError::Validation(_)));
    }

    #[test]
    fn both_or_neither_visual_rejected() {
        assert!(parse_paired("{\"id\":\"a\",\"captions\":[\"x\"]}").is_err());
        assert!(parse_paired("{\"id\":\"a\",\"features\":[1],\"frames\":[[1]],\"captions\":[\"x\"]}").is_err());
        assert!(parse_paired("{\"id\":\"a\",\"features\":[1],\"captions\":[]}").is_err());
    }

    #[test]
    fn label_vector_rejects_unknown() {
        let c = concepts(&["zebra"]);
        assert!(label_vector(&["otter".into()], &c).is_err());
        assert_eq!(label_vector(&["zebra".into()], &c).unwrap(), vec![1.0]);
    }

    use proptest::prelude::*;

    fn caption() -> impl Strategy<Value = String> {
        prop::collection::vec(prop::sample::select(vec!["a", "zebra", "giraffe", "field", "in", "the"]), 1..6)
            .prop_map(|w| w.join(" "))
    }

    proptest! {
        #[test]
        fn heldout_split_scan(examples in prop::collection::vec(prop::collection::vec(caption(), 1..4), 0..20)) {
            let paired: Vec<PairedExample> = examples
                .iter()
                .enumerate()
                .map(|(i, caps)| {
                    let refs: Vec<&str> = caps.iter().map(String::as_str).collect();
                    ex(&format!("e{i}"), &refs)
                })
                .collect();
            let (kept, removed) = build_heldout_split(&paired, &["zebra".to_string()]).unwrap();
            prop_assert_eq!(kept.len() + removed.len(), paired.len());
            for e in &kept {
                prop_assert!(e.captions.iter().flatten().all(|t| t != "zebra"));
            }
            for e in &removed {
                prop_assert!(e.mentions("zebra"));
            }
        }

        #[test]
        fn labels_only_grow_with_captions(caps in prop::collection::vec(caption(), 1..5), extra in caption()) {
            let c = concepts(&["zebra", "giraffe", "field"]);
            let refs: Vec<&str> = caps.iter().map(String::as_str).collect();
            let base = derive_concept_labels(&ex("x", &refs), &c);
            let mut more = refs.clone();
            more.push(&extra);
            let grown = derive_concept_labels(&ex("x", &more), &c);
            for (a, b) in base.iter().zip(&grown) {
                prop_assert!(b >= a);
            }
        }
    }
}
