//! Knowledge bases as RDF-style triples: automatic extraction from a
//! dataset, text serialization, and conversion to a bipartite graph.
//!
//! Text format, one triple per line (`#` comments and blank lines ignored):
//!
//! ```text
//! ("Serliana", isPartOf, "Renaissance Monument")
//! ("s000001", hasLabel, "Renaissance Monument")
//! ("s000001", hasAttributes, ["Rounded Arch", "Serliana"])
//! ```
//!
//! Strings are double-quoted with `\"` and `\\` escapes. Bare tokens are
//! accepted when they contain no comma, parenthesis or quote.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use crate::dataset::{TripleDataset, VectorizeConfig};
use crate::error::{read_to_string, Error, Result};
use crate::kg::KnowledgeGraph;

const MONUMAI_KB: &str = include_str!("../fixtures/monumai_kb.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Predicate {
    IsPartOf,
    HasLabel,
    HasAttributes,
}

impl Predicate {
    pub fn as_str(&self) -> &'static str {
        match self {
            Predicate::IsPartOf => "isPartOf",
            Predicate::HasLabel => "hasLabel",
            Predicate::HasAttributes => "hasAttributes",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "isPartOf" => Some(Predicate::IsPartOf),
            "hasLabel" => Some(Predicate::HasLabel),
            "hasAttributes" => Some(Predicate::HasAttributes),
            _ => None,
        }
    }
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Object {
    Name(String),
    /// Only valid for `hasAttributes`.
    List(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Triple {
    pub subject: String,
    pub predicate: Predicate,
    pub object: Object,
}

impl Triple {
    pub fn part_of(attribute: impl Into<String>, class: impl Into<String>) -> Self {
        Triple {
            subject: attribute.into(),
            predicate: Predicate::IsPartOf,
            object: Object::Name(class.into()),
        }
    }

    pub fn has_label(sample: impl Into<String>, class: impl Into<String>) -> Self {
        Triple {
            subject: sample.into(),
            predicate: Predicate::HasLabel,
            object: Object::Name(class.into()),
        }
    }

    pub fn has_attributes(sample: impl Into<String>, attributes: Vec<String>) -> Self {
        Triple {
            subject: sample.into(),
            predicate: Predicate::HasAttributes,
            object: Object::List(attributes),
        }
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if self.subject.is_empty() {
            return Err("empty subject".into());
        }
        match (&self.predicate, &self.object) {
            (Predicate::HasAttributes, Object::List(items)) => {
                if items.iter().any(String::is_empty) {
                    return Err("empty attribute name in list".into());
                }
            }
            (Predicate::HasAttributes, Object::Name(_)) => {
                return Err("hasAttributes expects a list object".into())
            }
            (_, Object::List(_)) => {
                return Err(format!("{} expects a single name object", self.predicate))
            }
            (_, Object::Name(name)) if name.is_empty() => return Err("empty object".into()),
            _ => {}
        }
        Ok(())
    }
}

impl fmt::Display for Triple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, ", quote(&self.subject), self.predicate)?;
        match &self.object {
            Object::Name(name) => write!(f, "{}", quote(name))?,
            Object::List(items) => {
                let inner: Vec<String> = items.iter().map(|s| quote(s)).collect();
                write!(f, "[{}]", inner.join(", "))?;
            }
        }
        write!(f, ")")
    }
}

fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        if c == '"' || c == '\\' {
            out.push('\\');
        }
        out.push(c);
    }
    out.push('"');
    out
}

/// `<TBox, ABox>`: `isPartOf` schema triples and per-sample assertions.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KnowledgeBase {
    tbox: Vec<Triple>,
    abox: Vec<Triple>,
}

impl KnowledgeBase {
    pub fn new(tbox: Vec<Triple>, abox: Vec<Triple>) -> Result<Self> {
        let mut seen = HashSet::new();
        for t in &tbox {
            t.validate().map_err(Error::validation)?;
            if t.predicate != Predicate::IsPartOf {
                return Err(Error::validation(format!("TBox triple {t} is not isPartOf")));
            }
            if !seen.insert(t) {
                return Err(Error::validation(format!("duplicate TBox triple {t}")));
            }
        }
        for t in &abox {
            t.validate().map_err(Error::validation)?;
            if t.predicate == Predicate::IsPartOf {
                return Err(Error::validation(format!("ABox triple {t} is isPartOf")));
            }
        }
        Ok(KnowledgeBase { tbox, abox })
    }

    /// The expert MonuMAI knowledge base (18 `isPartOf` triples).
    pub fn monumai() -> Self {
        parse_kb(MONUMAI_KB).expect("bundled MonuMAI fixture parses")
    }

    pub fn tbox(&self) -> &[Triple] {
        &self.tbox
    }

    pub fn abox(&self) -> &[Triple] {
        &self.abox
    }

    pub fn is_empty(&self) -> bool {
        self.tbox.is_empty() && self.abox.is_empty()
    }

    /// `(attribute, class)` pairs of the TBox in stored order.
    pub fn part_of_pairs(&self) -> impl Iterator<Item = (&str, &str)> {
        self.tbox.iter().filter_map(|t| match &t.object {
            Object::Name(class) => Some((t.subject.as_str(), class.as_str())),
            Object::List(_) => None,
        })
    }

    /// TBox attribute names in order of first appearance.
    pub fn attribute_names(&self) -> Vec<String> {
        first_appearance(self.part_of_pairs().map(|(a, _)| a))
    }

    /// TBox class names in order of first appearance.
    pub fn class_names(&self) -> Vec<String> {
        first_appearance(self.part_of_pairs().map(|(_, c)| c))
    }
}

fn first_appearance<'a>(names: impl Iterator<Item = &'a str>) -> Vec<String> {
    let mut seen = HashSet::new();
    names
        .filter(|n| seen.insert(*n))
        .map(str::to_string)
        .collect()
}

/// Triplifies a dataset. `(attr, isPartOf, class)` is emitted when the
/// attribute is present in at least `min_support` of the class's samples
/// (and in at least one). The ABox holds one `hasLabel` and one
/// `hasAttributes` triple per sample.
pub fn extract_kb(ds: &TripleDataset, min_support: f64) -> Result<KnowledgeBase> {
    if ds.is_empty() {
        return Err(Error::validation("cannot extract a knowledge base from an empty dataset"));
    }
    if !(0.0..=1.0).contains(&min_support) {
        return Err(Error::validation(format!("min_support {min_support} outside [0,1]")));
    }
    let vectors = ds.vectors(&VectorizeConfig::default())?;
    let n_attr = ds.attr_vocab.len();
    let mut class_totals = vec![0usize; ds.class_vocab.len()];
    let mut support = vec![vec![0usize; n_attr]; ds.class_vocab.len()];
    for (sample, v) in ds.samples.iter().zip(&vectors) {
        class_totals[sample.label] += 1;
        for j in v.ones() {
            support[sample.label][j] += 1;
        }
    }

    let mut tbox = Vec::new();
    for (class_id, class_name) in ds.class_vocab.names().iter().enumerate() {
        for (j, &count) in support[class_id].iter().enumerate() {
            if count > 0 && count as f64 >= min_support * class_totals[class_id] as f64 {
                tbox.push(Triple::part_of(ds.attr_vocab.name_at(j), class_name.clone()));
            }
        }
    }

    let mut abox = Vec::with_capacity(2 * ds.len());
    for (sample, v) in ds.samples.iter().zip(&vectors) {
        let class = ds.class_vocab.names()[sample.label].clone();
        abox.push(Triple::has_label(sample.sample_id.clone(), class));
        let names = v.ones().map(|j| ds.attr_vocab.name_at(j).to_string()).collect();
        abox.push(Triple::has_attributes(sample.sample_id.clone(), names));
    }
    KnowledgeBase::new(tbox, abox)
}

/// TBox triples first, then ABox, one per line.
pub fn serialize_kb(kb: &KnowledgeBase) -> String {
    let mut out = String::new();
    for t in kb.tbox.iter().chain(&kb.abox) {
        out.push_str(&t.to_string());
        out.push('\n');
    }
    out
}

pub fn load_kb(path: &Path) -> Result<KnowledgeBase> {
    parse_kb_named(&read_to_string(path)?, &path.display().to_string())
}

pub fn parse_kb(text: &str) -> Result<KnowledgeBase> {
    parse_kb_named(text, "<kb>")
}

pub fn parse_kb_named(text: &str, source_name: &str) -> Result<KnowledgeBase> {
    let mut tbox = Vec::new();
    let mut abox = Vec::new();
    let mut seen = HashSet::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let triple = parse_triple(line).map_err(|m| Error::parse(source_name, line_no, m))?;
        triple
            .validate()
            .map_err(|m| Error::parse(source_name, line_no, m))?;
        if triple.predicate == Predicate::IsPartOf {
            if !seen.insert(triple.clone()) {
                return Err(Error::parse(source_name, line_no, format!("duplicate triple {triple}")));
            }
            tbox.push(triple);
        } else {
            abox.push(triple);
        }
    }
    KnowledgeBase::new(tbox, abox)
}

struct Cursor<'a> {
    chars: std::iter::Peekable<std::str::Chars<'a>>,
}

impl Cursor<'_> {
    fn skip_ws(&mut self) {
        while self.chars.peek().is_some_and(|c| c.is_whitespace()) {
            self.chars.next();
        }
    }

    fn expect(&mut self, want: char) -> std::result::Result<(), String> {
        self.skip_ws();
        match self.chars.next() {
            Some(c) if c == want => Ok(()),
            Some(c) => Err(format!("expected '{want}', found '{c}'")),
            None => Err(format!("expected '{want}', found end of line")),
        }
    }

    fn peek_is(&mut self, want: char) -> bool {
        self.skip_ws();
        self.chars.peek() == Some(&want)
    }

    fn atom(&mut self) -> std::result::Result<String, String> {
        self.skip_ws();
        if self.chars.peek() == Some(&'"') {
            self.chars.next();
            let mut out = String::new();
            loop {
                match self.chars.next() {
                    Some('"') => return Ok(out),
                    Some('\\') => match self.chars.next() {
                        Some(c @ ('"' | '\\')) => out.push(c),
                        _ => return Err("bad escape in string".into()),
                    },
                    Some(c) => out.push(c),
                    None => return Err("unterminated string".into()),
                }
            }
        }
        let mut out = String::new();
        while let Some(&c) = self.chars.peek() {
            if matches!(c, ',' | '(' | ')' | '[' | ']' | '"') {
                break;
            }
            out.push(c);
            self.chars.next();
        }
        let out = out.trim().to_string();
        if out.is_empty() {
            Err("expected a name".into())
        } else {
            Ok(out)
        }
    }
}

fn parse_triple(line: &str) -> std::result::Result<Triple, String> {
    let mut cur = Cursor {
        chars: line.chars().peekable(),
    };
    cur.expect('(')?;
    let subject = cur.atom()?;
    cur.expect(',')?;
    let pred_token = cur.atom()?;
    let predicate =
        Predicate::parse(&pred_token).ok_or_else(|| format!("unknown predicate {pred_token:?}"))?;
    cur.expect(',')?;
    let object = if cur.peek_is('[') {
        cur.expect('[')?;
        let mut items = Vec::new();
        if !cur.peek_is(']') {
            loop {
                items.push(cur.atom()?);
                if cur.peek_is(',') {
                    cur.expect(',')?;
                } else {
                    break;
                }
            }
        }
        cur.expect(']')?;
        Object::List(items)
    } else {
        Object::Name(cur.atom()?)
    };
    cur.expect(')')?;
    cur.skip_ws();
    if let Some(c) = cur.chars.next() {
        return Err(format!("trailing input starting at '{c}'"));
    }
    Ok(Triple {
        subject,
        predicate,
        object,
    })
}

/// Bipartite graph with one node per TBox attribute and class and one edge
/// per `isPartOf` triple.
pub fn kb_to_graph(kb: &KnowledgeBase) -> KnowledgeGraph {
    let mut g = KnowledgeGraph::default();
    for (attr, class) in kb.part_of_pairs() {
        g.add_edge(attr, class);
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{AttributeVocabulary, BBox, ClassVocabulary};

    #[test]
    fn monumai_fixture_shape() {
        let kb = KnowledgeBase::monumai();
        assert_eq!(kb.tbox().len(), 18);
        assert!(kb.abox().is_empty());
        assert_eq!(kb.attribute_names().len(), 15);
        assert_eq!(
            kb.class_names(),
            [
                "Gothic Monument",
                "Hispanic-Muslim Monument",
                "Baroque Monument",
                "Renaissance Monument"
            ]
        );
        assert_eq!(parse_kb(&serialize_kb(&kb)).unwrap(), kb);
    }

    #[test]
    fn monumai_graph_counts() {
        let g = kb_to_graph(&KnowledgeBase::monumai());
        assert_eq!(g.attr_nodes().len(), 15);
        assert_eq!(g.class_nodes().len(), 4);
        assert_eq!(g.edges().len(), 18);
    }

    #[test]
    fn empty_round_trip() {
        let kb = KnowledgeBase::default();
        let text = serialize_kb(&kb);
        assert!(text.is_empty());
        assert_eq!(parse_kb(&text).unwrap(), kb);
        assert!(kb_to_graph(&kb).is_empty());
    }

    #[test]
    fn single_triple_single_edge() {
        let kb = KnowledgeBase::new(vec![Triple::part_of("a", "c")], vec![]).unwrap();
        let g = kb_to_graph(&kb);
        assert_eq!(g.edges().len(), 1);
    }

    #[test]
    fn unknown_predicate_rejected() {
        match parse_kb("(x, partOf, y)").unwrap_err() {
            Error::Parse { line, message, .. } => {
                assert_eq!(line, 1);
                assert!(message.contains("unknown predicate"), "{message}");
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn syntax_errors_carry_line_numbers() {
        let text = "(\"a\", isPartOf, \"c\")\n\n(\"b\", isPartOf, \"c\"\n";
        match parse_kb(text).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            e => panic!("unexpected {e}"),
        }
        let dup = "(a, isPartOf, c)\n(a, isPartOf, c)\n";
        assert!(matches!(parse_kb(dup), Err(Error::Parse { line: 2, .. })));
        assert!(parse_kb("(a, hasLabel, [b])").is_err());
    }

    #[test]
    fn quoted_names_escape() {
        let kb = KnowledgeBase::new(
            vec![Triple::part_of("odd \"name\", with comma", "c\\d")],
            vec![Triple::has_attributes("x", vec![])],
        )
        .unwrap();
        assert_eq!(parse_kb(&serialize_kb(&kb)).unwrap(), kb);
    }

    fn toy_dataset(samples: Vec<(&str, usize, Vec<u32>)>, n_attr: usize) -> TripleDataset {
        let attrs = AttributeVocabulary::new((1..=n_attr).map(|i| format!("a{i}"))).unwrap();
        let classes = ClassVocabulary::new(["c0", "c1"]).unwrap();
        let annotations = samples
            .into_iter()
            .map(|(id, label, ids)| {
                let boxes = ids
                    .iter()
                    .enumerate()
                    .map(|(k, &a)| BBox::new(a, 3 * k, 0, 2, 2))
                    .collect();
                (id.to_string(), label, boxes)
            })
            .collect();
        TripleDataset::from_annotations(attrs, classes, 8, 32, annotations).unwrap()
    }

    #[test]
    fn single_sample_kb() {
        let ds = toy_dataset(vec![("x", 0, vec![1])], 1);
        let kb = extract_kb(&ds, 0.0).unwrap();
        assert_eq!(kb.tbox(), &[Triple::part_of("a1", "c0")]);
        assert_eq!(
            kb.abox(),
            &[
                Triple::has_label("x", "c0"),
                Triple::has_attributes("x", vec!["a1".into()])
            ]
        );
    }

    #[test]
    fn min_support_filters_by_fraction() {
        // a2 appears in 1 of 2 c0 samples: support 0.5.
        let ds = toy_dataset(vec![("x", 0, vec![1, 2]), ("y", 0, vec![1]), ("z", 1, vec![3])], 3);
        let kb = extract_kb(&ds, 0.6).unwrap();
        let pairs: Vec<_> = kb.part_of_pairs().collect();
        assert_eq!(pairs, [("a1", "c0"), ("a3", "c1")]);
        let kb = extract_kb(&ds, 0.5).unwrap();
        assert!(kb.part_of_pairs().any(|p| p == ("a2", "c0")));
        assert_eq!(kb.abox().len(), 2 * ds.len());
    }

    #[test]
    fn empty_dataset_rejected() {
        let ds = toy_dataset(vec![], 1);
        assert!(extract_kb(&ds, 0.0).is_err());
    }
}
