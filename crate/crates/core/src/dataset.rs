//! Triple datasets: vocabularies, box annotations, segmentation maps and
//! attribute vectors, plus the manifest format and the synthetic generator.
//!
//! Manifest grammar (UTF-8, one record per line, `#` starts a comment line):
//!
//! ```text
//! greybox-manifest v1
//! grid <height> <width>
//! attr <id> <name...>          # ids contiguous from 1
//! class <id> <name...>         # ids contiguous from 0
//! sample <sample_id> <class_id> [<attr>,<x>,<y>,<w>,<h> ...]
//! ```
//!
//! SegMap files hold `H W` on the first line followed by `H` lines of `W`
//! space-separated attribute ids. Confidence files share the layout but hold
//! decimals in `[0, 1]`.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{read_to_string, Error, Result};
use crate::kb::KnowledgeBase;

pub const BACKGROUND: u32 = 0;
pub const MANIFEST_HEADER: &str = "greybox-manifest v1";
pub const DEFAULT_GRID: usize = 64;

/// Attribute names indexed by id; id 0 is background and has no entry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttributeVocabulary {
    names: Vec<String>,
}

impl AttributeVocabulary {
    /// Builds a vocabulary where `names[j]` receives id `j + 1`.
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        check_names(&names, "attribute")?;
        Ok(AttributeVocabulary { names })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn contains(&self, id: u32) -> bool {
        id >= 1 && (id as usize) <= self.names.len()
    }

    pub fn name(&self, id: u32) -> Option<&str> {
        if self.contains(id) {
            Some(&self.names[id as usize - 1])
        } else {
            None
        }
    }

    /// Name of the attribute at vector index `index` (id `index + 1`).
    pub fn name_at(&self, index: usize) -> &str {
        &self.names[index]
    }

    pub fn id_of(&self, name: &str) -> Option<u32> {
        self.names.iter().position(|n| n == name).map(|i| i as u32 + 1)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, &str)> {
        self.names
            .iter()
            .enumerate()
            .map(|(i, n)| (i as u32 + 1, n.as_str()))
    }
}

/// Class names indexed by id, contiguous from 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassVocabulary {
    names: Vec<String>,
}

impl ClassVocabulary {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        check_names(&names, "class")?;
        Ok(ClassVocabulary { names })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, id: usize) -> Option<&str> {
        self.names.get(id).map(String::as_str)
    }

    pub fn id_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

fn check_names(names: &[String], what: &str) -> Result<()> {
    let mut seen = HashSet::new();
    for name in names {
        if name.trim().is_empty() {
            return Err(Error::validation(format!("empty {what} name")));
        }
        if name.trim() != name {
            return Err(Error::validation(format!(
                "{what} name {name:?} has surrounding whitespace"
            )));
        }
        if !seen.insert(name.as_str()) {
            return Err(Error::validation(format!("duplicate {what} name {name:?}")));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BBox {
    pub attribute_id: u32,
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl BBox {
    pub fn new(attribute_id: u32, x: usize, y: usize, w: usize, h: usize) -> Self {
        BBox {
            attribute_id,
            x,
            y,
            w,
            h,
        }
    }

    pub fn area(&self) -> usize {
        self.w * self.h
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        col >= self.x && col < self.x + self.w && row >= self.y && row < self.y + self.h
    }

    pub fn check_bounds(&self, height: usize, width: usize) -> Result<()> {
        if self.w == 0 || self.h == 0 {
            return Err(Error::validation(format!("degenerate box {self:?}")));
        }
        if self.x + self.w > width || self.y + self.h > height {
            return Err(Error::validation(format!(
                "box {self:?} exceeds {height}x{width} grid"
            )));
        }
        Ok(())
    }

    /// True when the two boxes share a pixel or lie within `gap` pixels.
    fn near(&self, other: &BBox, gap: usize) -> bool {
        self.x < other.x + other.w + gap
            && other.x < self.x + self.w + gap
            && self.y < other.y + other.h + gap
            && other.y < self.y + self.h + gap
    }
}

/// Row-major grid of attribute ids with an optional confidence grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SegMap {
    height: usize,
    width: usize,
    labels: Vec<u32>,
    confidence: Option<Vec<f64>>,
}

impl SegMap {
    pub fn background(height: usize, width: usize) -> Self {
        SegMap {
            height,
            width,
            labels: vec![BACKGROUND; height * width],
            confidence: None,
        }
    }

    pub fn new(
        height: usize,
        width: usize,
        labels: Vec<u32>,
        confidence: Option<Vec<f64>>,
    ) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::validation(format!(
                "label grid has {} cells, expected {height}x{width}",
                labels.len()
            )));
        }
        if let Some(conf) = &confidence {
            if conf.len() != labels.len() {
                return Err(Error::validation("confidence grid shape differs from labels"));
            }
            if let Some(bad) = conf.iter().find(|c| !(0.0..=1.0).contains(*c)) {
                return Err(Error::validation(format!("confidence {bad} outside [0,1]")));
            }
        }
        Ok(SegMap {
            height,
            width,
            labels,
            confidence,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn confidence(&self) -> Option<&[f64]> {
        self.confidence.as_deref()
    }

    pub fn get(&self, row: usize, col: usize) -> u32 {
        self.labels[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, id: u32) {
        self.labels[row * self.width + col] = id;
    }

    pub fn with_confidence(self, confidence: Vec<f64>) -> Result<Self> {
        SegMap::new(self.height, self.width, self.labels, Some(confidence))
    }

    /// Checks every id against the vocabulary.
    pub fn check_vocabulary(&self, vocab: &AttributeVocabulary) -> Result<()> {
        match self
            .labels
            .iter()
            .find(|&&id| id != BACKGROUND && !vocab.contains(id))
        {
            Some(id) => Err(Error::validation(format!(
                "segmentation id {id} not in attribute vocabulary"
            ))),
            None => Ok(()),
        }
    }

    /// Number of 4-connected regions per attribute id (background excluded).
    pub fn region_counts(&self) -> BTreeMap<u32, usize> {
        let mut seen = vec![false; self.labels.len()];
        let mut counts = BTreeMap::new();
        let mut stack = Vec::new();
        for start in 0..self.labels.len() {
            let id = self.labels[start];
            if id == BACKGROUND || seen[start] {
                continue;
            }
            *counts.entry(id).or_insert(0) += 1;
            seen[start] = true;
            stack.push(start);
            while let Some(cell) = stack.pop() {
                let (r, c) = (cell / self.width, cell % self.width);
                let mut visit = |nr: usize, nc: usize| {
                    let n = nr * self.width + nc;
                    if !seen[n] && self.labels[n] == id {
                        seen[n] = true;
                        stack.push(n);
                    }
                };
                if r > 0 {
                    visit(r - 1, c);
                }
                if r + 1 < self.height {
                    visit(r + 1, c);
                }
                if c > 0 {
                    visit(r, c - 1);
                }
                if c + 1 < self.width {
                    visit(r, c + 1);
                }
            }
        }
        counts
    }

    pub fn to_text(&self) -> String {
        grid_to_text(self.height, self.width, &self.labels)
    }

    pub fn confidence_to_text(&self) -> Option<String> {
        self.confidence
            .as_ref()
            .map(|c| grid_to_text(self.height, self.width, c))
    }

    /// Parses the label grid format.
    pub fn parse(text: &str, source_name: &str) -> Result<Self> {
        let (height, width, labels) = parse_grid::<u32>(text, source_name, |_| Ok(()))?;
        SegMap::new(height, width, labels, None)
    }

    /// Parses a confidence grid; values must lie in `[0, 1]`.
    pub fn parse_confidence(text: &str, source_name: &str) -> Result<(usize, usize, Vec<f64>)> {
        parse_grid::<f64>(text, source_name, |v| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(format!("confidence {v} outside [0,1]"))
            }
        })
    }
}

fn grid_to_text<T: fmt::Display>(height: usize, width: usize, cells: &[T]) -> String {
    let mut out = format!("{height} {width}\n");
    for row in 0..height {
        let line: Vec<String> = cells[row * width..(row + 1) * width]
            .iter()
            .map(ToString::to_string)
            .collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

fn parse_grid<T: std::str::FromStr + Copy>(
    text: &str,
    source_name: &str,
    check: impl Fn(T) -> std::result::Result<(), String>,
) -> Result<(usize, usize, Vec<T>)> {
    let mut lines = text.lines().enumerate();
    let (height, width) = match lines.next() {
        Some((_, header)) => {
            let dims: Vec<&str> = header.split_whitespace().collect();
            match dims.as_slice() {
                [h, w] => match (h.parse::<usize>(), w.parse::<usize>()) {
                    (Ok(h), Ok(w)) if h > 0 && w > 0 => (h, w),
                    _ => return Err(Error::parse(source_name, 1, "expected positive \"H W\"")),
                },
                _ => return Err(Error::parse(source_name, 1, "expected \"H W\" header")),
            }
        }
        None => return Err(Error::parse(source_name, 1, "empty grid file")),
    };
    let mut cells = Vec::with_capacity(height * width);
    let mut rows = 0;
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        if rows == height {
            return Err(Error::parse(source_name, line_no, "more rows than declared height"));
        }
        let mut count = 0;
        for token in line.split_whitespace() {
            let value: T = token
                .parse()
                .map_err(|_| Error::parse(source_name, line_no, format!("bad value {token:?}")))?;
            check(value).map_err(|m| Error::parse(source_name, line_no, m))?;
            cells.push(value);
            count += 1;
        }
        if count != width {
            return Err(Error::parse(
                source_name,
                line_no,
                format!("row has {count} values, expected {width}"),
            ));
        }
        rows += 1;
    }
    if rows != height {
        return Err(Error::parse(
            source_name,
            rows + 2,
            format!("found {rows} rows, expected {height}"),
        ));
    }
    Ok((height, width, cells))
}

/// Binary attribute-presence vector; index `j` stands for attribute id `j + 1`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AttributeVector {
    bits: Vec<bool>,
}

impl AttributeVector {
    pub fn zeros(len: usize) -> Self {
        AttributeVector {
            bits: vec![false; len],
        }
    }

    pub fn from_bits(bits: Vec<bool>) -> Self {
        AttributeVector { bits }
    }

    /// Sets the bits for the given attribute ids (1-based). Ids out of range
    /// are a validation error.
    pub fn from_ids(ids: impl IntoIterator<Item = u32>, len: usize) -> Result<Self> {
        let mut v = AttributeVector::zeros(len);
        for id in ids {
            if id == 0 || id as usize > len {
                return Err(Error::validation(format!("attribute id {id} out of range 1..={len}")));
            }
            v.bits[id as usize - 1] = true;
        }
        Ok(v)
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn get(&self, index: usize) -> bool {
        self.bits[index]
    }

    pub fn toggle(&mut self, index: usize) {
        self.bits[index] = !self.bits[index];
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    /// Indices of set bits, ascending.
    pub fn ones(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits
            .iter()
            .enumerate()
            .filter_map(|(i, b)| b.then_some(i))
    }

    /// Attribute ids of set bits, ascending.
    pub fn ids(&self) -> BTreeSet<u32> {
        self.ones().map(|i| i as u32 + 1).collect()
    }
}

impl fmt::Display for AttributeVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, b) in self.bits.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{}", u8::from(*b))?;
        }
        write!(f, "]")
    }
}

/// Confidence mask applied during vectorization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VectorizeConfig {
    pub tau: f64,
    pub min_pixels: usize,
}

impl Default for VectorizeConfig {
    fn default() -> Self {
        VectorizeConfig {
            tau: 0.5,
            min_pixels: 1,
        }
    }
}

impl VectorizeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::validation(format!("tau {} outside [0,1]", self.tau)));
        }
        if self.min_pixels == 0 {
            return Err(Error::validation("min_pixels must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub sample_id: String,
    pub gt_boxes: Vec<BBox>,
    pub gt_segmap: SegMap,
    pub label: usize,
}

impl Sample {
    /// Number of ground-truth boxes per attribute id.
    pub fn box_counts(&self) -> BTreeMap<u32, usize> {
        let mut counts = BTreeMap::new();
        for b in &self.gt_boxes {
            *counts.entry(b.attribute_id).or_insert(0) += 1;
        }
        counts
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TripleDataset {
    pub attr_vocab: AttributeVocabulary,
    pub class_vocab: ClassVocabulary,
    pub height: usize,
    pub width: usize,
    pub samples: Vec<Sample>,
}

impl TripleDataset {
    /// Builds a dataset from box annotations, rasterizing each sample and
    /// sorting by sample id.
    pub fn from_annotations(
        attr_vocab: AttributeVocabulary,
        class_vocab: ClassVocabulary,
        height: usize,
        width: usize,
        annotations: Vec<(String, usize, Vec<BBox>)>,
    ) -> Result<Self> {
        let mut ids = HashSet::new();
        let mut samples = Vec::with_capacity(annotations.len());
        for (sample_id, label, boxes) in annotations {
            if sample_id.is_empty() || sample_id.chars().any(char::is_whitespace) {
                return Err(Error::validation(format!("invalid sample id {sample_id:?}")));
            }
            if !ids.insert(sample_id.clone()) {
                return Err(Error::validation(format!("duplicate sample id {sample_id}")));
            }
            if label >= class_vocab.len() {
                return Err(Error::validation(format!(
                    "sample {sample_id}: unknown class id {label}"
                )));
            }
            for b in &boxes {
                if !attr_vocab.contains(b.attribute_id) {
                    return Err(Error::validation(format!(
                        "sample {sample_id}: unknown attribute id {}",
                        b.attribute_id
                    )));
                }
                b.check_bounds(height, width)
                    .map_err(|e| Error::validation(format!("sample {sample_id}: {e}")))?;
            }
            let gt_segmap = rasterize_bboxes(&boxes, height, width)?;
            samples.push(Sample {
                sample_id,
                gt_boxes: boxes,
                gt_segmap,
                label,
            });
        }
        samples.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
        Ok(TripleDataset {
            attr_vocab,
            class_vocab,
            height,
            width,
            samples,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    /// Ground-truth attribute vectors under `cfg`.
    pub fn vectors(&self, cfg: &VectorizeConfig) -> Result<Vec<AttributeVector>> {
        self.samples
            .iter()
            .map(|s| vectorize(&s.gt_segmap, &self.attr_vocab, cfg))
            .collect()
    }

    pub fn sample(&self, sample_id: &str) -> Option<&Sample> {
        self.samples
            .binary_search_by(|s| s.sample_id.as_str().cmp(sample_id))
            .ok()
            .map(|i| &self.samples[i])
    }

    fn with_samples(&self, samples: Vec<Sample>) -> TripleDataset {
        TripleDataset {
            attr_vocab: self.attr_vocab.clone(),
            class_vocab: self.class_vocab.clone(),
            height: self.height,
            width: self.width,
            samples,
        }
    }

    /// Seeded random split; returns `(train, test)` with
    /// `round(test_fraction * n)` test samples, both sorted by id.
    pub fn split(&self, test_fraction: f64, seed: u64) -> Result<(TripleDataset, TripleDataset)> {
        if !(0.0..1.0).contains(&test_fraction) {
            return Err(Error::validation(format!(
                "test fraction {test_fraction} outside [0,1)"
            )));
        }
        let mut order: Vec<usize> = (0..self.samples.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n_test = (test_fraction * self.samples.len() as f64).round() as usize;
        let mut test_idx = order[..n_test].to_vec();
        let mut train_idx = order[n_test..].to_vec();
        test_idx.sort_unstable();
        train_idx.sort_unstable();
        let pick = |idx: &[usize]| idx.iter().map(|&i| self.samples[i].clone()).collect();
        Ok((self.with_samples(pick(&train_idx)), self.with_samples(pick(&test_idx))))
    }
}

pub fn load_dataset(manifest_path: &Path) -> Result<TripleDataset> {
    let text = read_to_string(manifest_path)?;
    parse_manifest(&text, &manifest_path.display().to_string())
}

pub fn parse_manifest(text: &str, source_name: &str) -> Result<TripleDataset> {
    let mut header_seen = false;
    let mut grid = None;
    let mut attrs: BTreeMap<u32, String> = BTreeMap::new();
    let mut classes: BTreeMap<usize, String> = BTreeMap::new();
    let mut annotations = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !header_seen {
            if line != MANIFEST_HEADER {
                return Err(Error::parse(
                    source_name,
                    line_no,
                    format!("expected header {MANIFEST_HEADER:?}"),
                ));
            }
            header_seen = true;
            continue;
        }
        let (kind, rest) = line.split_once(char::is_whitespace).unwrap_or((line, ""));
        let rest = rest.trim();
        let err = |m: String| Error::parse(source_name, line_no, m);
        match kind {
            "grid" => {
                let dims: Vec<usize> = rest
                    .split_whitespace()
                    .map(str::parse)
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| err("grid expects two integers".into()))?;
                match dims.as_slice() {
                    [h, w] if *h > 0 && *w > 0 => grid = Some((*h, *w)),
                    _ => return Err(err("grid expects two positive integers".into())),
                }
            }
            "attr" | "class" => {
                let (id, name) = rest
                    .split_once(char::is_whitespace)
                    .ok_or_else(|| err(format!("{kind} record needs an id and a name")))?;
                let name = name.trim().to_string();
                if kind == "attr" {
                    let id: u32 = id.parse().map_err(|_| err(format!("bad attribute id {id:?}")))?;
                    if attrs.insert(id, name).is_some() {
                        return Err(err(format!("duplicate attribute id {id}")));
                    }
                } else {
                    let id: usize = id.parse().map_err(|_| err(format!("bad class id {id:?}")))?;
                    if classes.insert(id, name).is_some() {
                        return Err(err(format!("duplicate class id {id}")));
                    }
                }
            }
            "sample" => {
                let mut tokens = rest.split_whitespace();
                let sample_id = tokens.next().ok_or_else(|| err("sample record needs an id".into()))?;
                let class_id: usize = tokens
                    .next()
                    .ok_or_else(|| err("sample record needs a class id".into()))?
                    .parse()
                    .map_err(|_| err("bad class id".into()))?;
                let boxes = tokens
                    .map(|t| parse_box(t).ok_or_else(|| err(format!("bad box {t:?}"))))
                    .collect::<Result<Vec<_>>>()?;
                annotations.push((sample_id.to_string(), class_id, boxes));
            }
            other => return Err(err(format!("unknown record kind {other:?}"))),
        }
    }
    if !header_seen {
        return Err(Error::parse(source_name, 1, "missing manifest header"));
    }
    let (height, width) = grid.unwrap_or((DEFAULT_GRID, DEFAULT_GRID));
    let attr_vocab = AttributeVocabulary::new(contiguous(attrs, 1, "attribute")?)?;
    let class_vocab = ClassVocabulary::new(contiguous(classes, 0, "class")?)?;
    TripleDataset::from_annotations(attr_vocab, class_vocab, height, width, annotations)
}

fn contiguous<K>(entries: BTreeMap<K, String>, first: usize, what: &str) -> Result<Vec<String>>
where
    K: Copy + TryInto<u64>,
{
    let mut names = Vec::with_capacity(entries.len());
    for (expected, (id, name)) in (first as u64..).zip(entries) {
        if id.try_into().ok() != Some(expected) {
            return Err(Error::validation(format!(
                "{what} ids must be contiguous from {first}; missing {expected}"
            )));
        }
        names.push(name);
    }
    Ok(names)
}

fn parse_box(token: &str) -> Option<BBox> {
    let parts: Vec<usize> = token
        .split(',')
        .map(|p| p.parse().ok())
        .collect::<Option<_>>()?;
    match parts.as_slice() {
        [a, x, y, w, h] => Some(BBox::new(u32::try_from(*a).ok()?, *x, *y, *w, *h)),
        _ => None,
    }
}

pub fn serialize_manifest(ds: &TripleDataset) -> String {
    let mut out = String::new();
    out.push_str(MANIFEST_HEADER);
    out.push('\n');
    out.push_str(&format!("grid {} {}\n", ds.height, ds.width));
    for (id, name) in ds.attr_vocab.iter() {
        out.push_str(&format!("attr {id} {name}\n"));
    }
    for (id, name) in ds.class_vocab.names().iter().enumerate() {
        out.push_str(&format!("class {id} {name}\n"));
    }
    for s in &ds.samples {
        out.push_str(&format!("sample {} {}", s.sample_id, s.label));
        for b in &s.gt_boxes {
            out.push_str(&format!(" {},{},{},{},{}", b.attribute_id, b.x, b.y, b.w, b.h));
        }
        out.push('\n');
    }
    out
}

/// Paints boxes onto a background grid. A pixel covered by several boxes
/// takes the attribute of the smallest box; equal areas go to the lowest
/// attribute id.
pub fn rasterize_bboxes(boxes: &[BBox], height: usize, width: usize) -> Result<SegMap> {
    for b in boxes {
        b.check_bounds(height, width)?;
        if b.attribute_id == BACKGROUND {
            return Err(Error::validation("box with background attribute id 0"));
        }
    }
    let mut order: Vec<&BBox> = boxes.iter().collect();
    // Paint largest first so the highest-priority box is written last.
    order.sort_by(|a, b| {
        b.area()
            .cmp(&a.area())
            .then(b.attribute_id.cmp(&a.attribute_id))
    });
    let mut map = SegMap::background(height, width);
    for b in order {
        for row in b.y..b.y + b.h {
            for col in b.x..b.x + b.w {
                map.set(row, col, b.attribute_id);
            }
        }
    }
    Ok(map)
}

/// Collapses a segmentation map into a presence vector: attribute `j + 1`
/// is present iff it covers at least `min_pixels` cells with confidence
/// `>= tau` (missing confidence counts as 1.0).
pub fn vectorize(
    segmap: &SegMap,
    vocab: &AttributeVocabulary,
    cfg: &VectorizeConfig,
) -> Result<AttributeVector> {
    cfg.validate()?;
    segmap.check_vocabulary(vocab)?;
    let mut counts = vec![0usize; vocab.len()];
    for (cell, &id) in segmap.labels().iter().enumerate() {
        if id == BACKGROUND {
            continue;
        }
        let conf = segmap.confidence().map_or(1.0, |c| c[cell]);
        if conf >= cfg.tau {
            counts[id as usize - 1] += 1;
        }
    }
    Ok(AttributeVector::from_bits(
        counts.into_iter().map(|n| n >= cfg.min_pixels).collect(),
    ))
}

/// Parameters of the synthetic KB-driven generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    /// Probability of omitting each KB-linked attribute from a sample.
    pub p_omit: f64,
    pub height: usize,
    pub width: usize,
    /// Each retained attribute gets 1..=max_instances boxes.
    pub max_instances: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            p_omit: 0.0,
            height: DEFAULT_GRID,
            width: DEFAULT_GRID,
            max_instances: 3,
        }
    }
}

const MIN_SIDE: usize = 2;
const PLACEMENT_ATTEMPTS: usize = 400;

/// Generates `n_per_class` samples per class whose attribute sets are drawn
/// from the class's `isPartOf` attributes. Boxes never touch each other, so
/// every box is also a distinct 4-connected region of the rasterized map.
pub fn synth_generate(
    kb: &KnowledgeBase,
    n_per_class: usize,
    cfg: &SynthConfig,
    seed: u64,
) -> Result<TripleDataset> {
    if !(0.0..=1.0).contains(&cfg.p_omit) {
        return Err(Error::validation(format!("p_omit {} outside [0,1]", cfg.p_omit)));
    }
    if cfg.max_instances == 0 || cfg.height < MIN_SIDE || cfg.width < MIN_SIDE {
        return Err(Error::validation("synthetic grid or instance count too small"));
    }
    let attr_vocab = AttributeVocabulary::new(kb.attribute_names())?;
    let class_vocab = ClassVocabulary::new(kb.class_names())?;
    let mut linked: Vec<Vec<u32>> = vec![Vec::new(); class_vocab.len()];
    for (attr, class) in kb.part_of_pairs() {
        let a = attr_vocab.id_of(attr).expect("attribute derived from kb");
        let c = class_vocab.id_of(class).expect("class derived from kb");
        linked[c].push(a);
    }
    for (c, attrs) in linked.iter_mut().enumerate() {
        if attrs.is_empty() {
            return Err(Error::validation(format!(
                "class {:?} has no linked attributes",
                class_vocab.names()[c]
            )));
        }
        attrs.sort_unstable();
        attrs.dedup();
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total = n_per_class * class_vocab.len();
    let digits = total.max(1).to_string().len().max(6);
    let max_side = (cfg.height.min(cfg.width) / 8).max(MIN_SIDE + 1);
    let mut annotations = Vec::with_capacity(total);
    for (class_id, attrs) in linked.iter().enumerate() {
        for _ in 0..n_per_class {
            let mut kept: Vec<u32> = attrs
                .iter()
                .copied()
                .filter(|_| !rng.gen_bool(cfg.p_omit))
                .collect();
            if kept.is_empty() {
                kept.push(attrs[rng.gen_range(0..attrs.len())]);
            }
            let mut boxes = Vec::new();
            for &attr in &kept {
                let instances = rng.gen_range(1..=cfg.max_instances);
                for _ in 0..instances {
                    let b = place_box(&mut rng, attr, &boxes, cfg.height, cfg.width, max_side)?;
                    boxes.push(b);
                }
            }
            let sample_id = format!("s{:0digits$}", annotations.len());
            annotations.push((sample_id, class_id, boxes));
        }
    }
    TripleDataset::from_annotations(attr_vocab, class_vocab, cfg.height, cfg.width, annotations)
}

fn place_box(
    rng: &mut ChaCha8Rng,
    attr: u32,
    existing: &[BBox],
    height: usize,
    width: usize,
    max_side: usize,
) -> Result<BBox> {
    for attempt in 0..PLACEMENT_ATTEMPTS {
        // Fall back to minimal boxes once the grid gets crowded.
        let hi = if attempt < PLACEMENT_ATTEMPTS / 2 { max_side } else { MIN_SIDE };
        let w = rng.gen_range(MIN_SIDE..=hi);
        let h = rng.gen_range(MIN_SIDE..=hi);
        let x = rng.gen_range(0..=width - w);
        let y = rng.gen_range(0..=height - h);
        let candidate = BBox::new(attr, x, y, w, h);
        if existing.iter().all(|b| !candidate.near(b, 1)) {
            return Ok(candidate);
        }
    }
    Err(Error::validation(format!(
        "could not place a box for attribute {attr} on a {height}x{width} grid"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab(n: usize) -> AttributeVocabulary {
        AttributeVocabulary::new((1..=n).map(|i| format!("a{i}"))).unwrap()
    }

    /// Pixel-wise evaluation of the overlap rule, independent of paint order.
    fn brute_force_raster(boxes: &[BBox], height: usize, width: usize) -> Vec<u32> {
        let mut out = Vec::with_capacity(height * width);
        for row in 0..height {
            for col in 0..width {
                let winner = boxes
                    .iter()
                    .filter(|b| b.contains(row, col))
                    .min_by_key(|b| (b.area(), b.attribute_id));
                out.push(winner.map_or(BACKGROUND, |b| b.attribute_id));
            }
        }
        out
    }

    #[test]
    fn empty_boxes_give_background() {
        let map = rasterize_bboxes(&[], 5, 7).unwrap();
        assert!(map.labels().iter().all(|&id| id == BACKGROUND));
        assert_eq!((map.height(), map.width()), (5, 7));
    }

    #[test]
    fn smallest_box_wins_inside_larger_box() {
        let boxes = [BBox::new(1, 0, 0, 10, 10), BBox::new(2, 3, 3, 2, 2)];
        let map = rasterize_bboxes(&boxes, 12, 12).unwrap();
        let twos = map.labels().iter().filter(|&&id| id == 2).count();
        let ones = map.labels().iter().filter(|&&id| id == 1).count();
        assert_eq!(twos, 4);
        assert_eq!(ones, 96);
        assert_eq!(map.get(3, 3), 2);
        assert_eq!(map.get(4, 4), 2);
        assert_eq!(map.get(0, 0), 1);
    }

    #[test]
    fn equal_area_tie_goes_to_lowest_id() {
        // 2x2 boxes sharing exactly pixel (row 1, col 1).
        let boxes = [BBox::new(5, 0, 0, 2, 2), BBox::new(3, 1, 1, 2, 2)];
        let map = rasterize_bboxes(&boxes, 4, 4).unwrap();
        assert_eq!(map.get(1, 1), 3);
        assert_eq!(map.labels(), brute_force_raster(&boxes, 4, 4).as_slice());
    }

    #[test]
    fn out_of_bounds_box_rejected() {
        let err = rasterize_bboxes(&[BBox::new(1, 3, 0, 3, 1)], 4, 5).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
        assert!(rasterize_bboxes(&[BBox::new(1, 0, 0, 0, 1)], 4, 5).is_err());
    }

    #[test]
    fn vectorize_background_is_zero() {
        let v = vectorize(&SegMap::background(4, 4), &vocab(5), &VectorizeConfig::default()).unwrap();
        assert_eq!(v, AttributeVector::zeros(5));
    }

    #[test]
    fn vectorize_reports_present_attributes() {
        let boxes = [
            BBox::new(1, 0, 0, 2, 2),
            BBox::new(3, 3, 0, 1, 1),
            BBox::new(4, 0, 3, 3, 1),
        ];
        let map = rasterize_bboxes(&boxes, 5, 5).unwrap();
        let v = vectorize(&map, &vocab(8), &VectorizeConfig::default()).unwrap();
        assert_eq!(v.to_string(), "[1, 0, 1, 1, 0, 0, 0, 0]");
    }

    #[test]
    fn vectorize_drops_low_confidence_cells() {
        let labels = vec![2, 2, 2, 0, 1, 0];
        let conf = vec![0.4, 0.4, 0.4, 1.0, 0.9, 1.0];
        let map = SegMap::new(2, 3, labels, Some(conf)).unwrap();
        let cfg = VectorizeConfig { tau: 0.5, min_pixels: 1 };
        let v = vectorize(&map, &vocab(3), &cfg).unwrap();
        // brute-force count of qualifying cells for attribute 2
        let qualifying = map
            .labels()
            .iter()
            .zip(map.confidence().unwrap())
            .filter(|(&id, &c)| id == 2 && c >= cfg.tau)
            .count();
        assert_eq!(qualifying, 0);
        assert!(!v.get(1));
        assert!(v.get(0));
    }

    #[test]
    fn vectorize_min_pixels() {
        let map = SegMap::new(1, 4, vec![1, 1, 2, 0], None).unwrap();
        let cfg = VectorizeConfig { tau: 0.0, min_pixels: 2 };
        let v = vectorize(&map, &vocab(2), &cfg).unwrap();
        assert_eq!(v.bits(), &[true, false]);
    }

    #[test]
    fn vectorize_rejects_unknown_ids_and_bad_config() {
        let map = SegMap::new(1, 2, vec![7, 0], None).unwrap();
        assert!(vectorize(&map, &vocab(2), &VectorizeConfig::default()).is_err());
        let ok = SegMap::background(1, 1);
        let bad = VectorizeConfig { tau: 1.5, min_pixels: 1 };
        assert!(vectorize(&ok, &vocab(2), &bad).is_err());
        let bad = VectorizeConfig { tau: 0.5, min_pixels: 0 };
        assert!(vectorize(&ok, &vocab(2), &bad).is_err());
    }

    #[test]
    fn segmap_text_round_trip_and_errors() {
        let map = SegMap::new(2, 3, vec![0, 1, 2, 3, 0, 0], Some(vec![0.5, 1.0, 0.25, 0.0, 1.0, 0.125]))
            .unwrap();
        let parsed = SegMap::parse(&map.to_text(), "m").unwrap();
        assert_eq!(parsed.labels(), map.labels());
        let (h, w, conf) = SegMap::parse_confidence(&map.confidence_to_text().unwrap(), "c").unwrap();
        assert_eq!((h, w), (2, 3));
        assert_eq!(conf, map.confidence().unwrap());

        let bad = "5 3\n0 0 0\n0 0 0\n0 0 0\n0 0 0\n0 0\n";
        match SegMap::parse(bad, "bad").unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 6),
            e => panic!("unexpected {e}"),
        }
        assert!(SegMap::parse_confidence("1 2\n0.5 1.3\n", "c").is_err());
    }

    #[test]
    fn region_counts_use_four_connectivity() {
        // Diagonal neighbours are separate regions.
        let map = SegMap::new(3, 3, vec![1, 0, 1, 0, 1, 0, 2, 2, 0], None).unwrap();
        let counts = map.region_counts();
        assert_eq!(counts[&1], 3);
        assert_eq!(counts[&2], 1);
    }

    const MANIFEST: &str = "\
greybox-manifest v1
# toy
grid 8 8
attr 1 Pointed Arch
attr 2 Horseshoe Arch
attr 3 Serliana
class 0 Gothic Monument
class 1 Hispanic-Muslim Monument
sample b 1 2,0,0,3,3
sample a 0 1,1,1,2,2 3,5,5,2,2
";

    #[test]
    fn manifest_loads_and_sorts() {
        let ds = parse_manifest(MANIFEST, "toy").unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.attr_vocab.len(), 3);
        assert_eq!(ds.class_vocab.len(), 2);
        assert_eq!(ds.samples[0].sample_id, "a");
        assert_eq!(ds.attr_vocab.name(3), Some("Serliana"));
        let again = parse_manifest(&serialize_manifest(&ds), "again").unwrap();
        assert_eq!(again, ds);
    }

    #[test]
    fn manifest_unknown_attribute_names_sample() {
        let text = MANIFEST.replace("sample b 1 2,0,0,3,3", "sample b 1 99,0,0,3,3");
        match parse_manifest(&text, "toy").unwrap_err() {
            Error::Validation(m) => assert!(m.contains("sample b"), "{m}"),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn manifest_syntax_error_has_line() {
        let text = MANIFEST.replace("grid 8 8", "grid 8");
        match parse_manifest(&text, "toy").unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn split_partitions_samples() {
        let ds = parse_manifest(MANIFEST, "toy").unwrap();
        let (train, test) = ds.split(0.5, 3).unwrap();
        assert_eq!(train.len() + test.len(), 2);
        assert_eq!(test.len(), 1);
    }
}
