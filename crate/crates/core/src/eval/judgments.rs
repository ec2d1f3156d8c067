//! Graded (query, product) judgments and the training-visibility manifest.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::click_graph::ClickGraph;
use crate::error::{Error, Result};
use crate::pairs::{PairDataset, Role};
use crate::text::normalize;

pub const RELEVANT: f64 = 1.0;
pub const PARTIAL: f64 = 0.5;
pub const IRRELEVANT: f64 = 0.0;

fn check_grade(g: f64) -> Result<f64> {
    if g == RELEVANT || g == PARTIAL || g == IRRELEVANT {
        Ok(g)
    } else if g < 0.0 {
        Err(Error::NegativeGrade(g))
    } else {
        Err(Error::Config(format!("grade {g} is not one of 1, 0.5, 0")))
    }
}

/// Maps judgment label strings to grades. Numeric labels are accepted as-is.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMap {
    labels: HashMap<String, f64>,
}

impl Default for LabelMap {
    fn default() -> Self {
        let labels = [("exact", RELEVANT), ("partial", PARTIAL), ("irrelevant", IRRELEVANT)]
            .into_iter()
            .map(|(k, v)| (k.to_owned(), v))
            .collect();
        LabelMap { labels }
    }
}

impl LabelMap {
    /// Parses `Label=grade,Label=grade`.
    pub fn parse(spec: &str) -> Result<Self> {
        let mut labels = HashMap::new();
        for item in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let (k, v) = item
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("label mapping {item:?} lacks '='")))?;
            let g: f64 = v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad grade in {item:?}")))?;
            labels.insert(k.trim().to_lowercase(), check_grade(g)?);
        }
        Ok(LabelMap { labels })
    }

    pub fn grade(&self, label: &str) -> Result<f64> {
        let key = label.trim().to_lowercase();
        if let Some(&g) = self.labels.get(&key) {
            return Ok(g);
        }
        match key.parse::<f64>() {
            Ok(g) => check_grade(g),
            Err(_) => Err(Error::Config(format!("unknown label {label:?}"))),
        }
    }
}

/// Relevance grades over interned queries and products.
///
/// Once expanded, every query × product combination is part of the set and
/// unannotated combinations count as irrelevant.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Judgments {
    queries: Vec<String>,
    query_index: HashMap<String, u32>,
    products: Vec<String>,
    product_index: HashMap<String, u32>,
    annotated: BTreeMap<(u32, u32), f64>,
    exhaustive: bool,
}

impl Judgments {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn intern_query(&mut self, text: &str) -> u32 {
        let text = normalize(text);
        if let Some(&id) = self.query_index.get(&text) {
            return id;
        }
        let id = self.queries.len() as u32;
        self.query_index.insert(text.clone(), id);
        self.queries.push(text);
        id
    }

    pub fn intern_product(&mut self, text: &str) -> u32 {
        let text = normalize(text);
        if let Some(&id) = self.product_index.get(&text) {
            return id;
        }
        let id = self.products.len() as u32;
        self.product_index.insert(text.clone(), id);
        self.products.push(text);
        id
    }

    /// Records a grade. A repeated pair keeps the higher grade.
    pub fn insert(&mut self, query: &str, product: &str, grade: f64) -> Result<()> {
        let grade = check_grade(grade)?;
        let q = self.intern_query(query);
        let p = self.intern_product(product);
        let slot = self.annotated.entry((q, p)).or_insert(grade);
        *slot = slot.max(grade);
        Ok(())
    }

    pub fn num_queries(&self) -> usize {
        self.queries.len()
    }

    pub fn num_products(&self) -> usize {
        self.products.len()
    }

    pub fn num_annotated(&self) -> usize {
        self.annotated.len()
    }

    pub fn is_exhaustive(&self) -> bool {
        self.exhaustive
    }

    /// Number of judged pairs: |Q|·|P| once expanded.
    pub fn len(&self) -> usize {
        if self.exhaustive {
            self.queries.len() * self.products.len()
        } else {
            self.annotated.len()
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn queries(&self) -> &[String] {
        &self.queries
    }

    pub fn products(&self) -> &[String] {
        &self.products
    }

    pub fn query_id(&self, text: &str) -> Option<u32> {
        self.query_index.get(&normalize(text)).copied()
    }

    pub fn product_id(&self, text: &str) -> Option<u32> {
        self.product_index.get(&normalize(text)).copied()
    }

    /// The grade of a pair, `None` if it is not part of the judgment set.
    pub fn grade(&self, q: u32, p: u32) -> Option<f64> {
        match self.annotated.get(&(q, p)) {
            Some(&g) => Some(g),
            None if self.exhaustive
                && (q as usize) < self.queries.len()
                && (p as usize) < self.products.len() =>
            {
                Some(IRRELEVANT)
            }
            None => None,
        }
    }

    /// Annotated grades of one query, sparse.
    pub fn annotated(&self) -> impl Iterator<Item = (u32, u32, f64)> + '_ {
        self.annotated.iter().map(|(&(q, p), &g)| (q, p, g))
    }

    /// Every judged pair in (query, product) order.
    pub fn pairs(&self) -> Box<dyn Iterator<Item = (u32, u32, f64)> + '_> {
        if self.exhaustive {
            let np = self.products.len() as u32;
            Box::new((0..self.queries.len() as u32).flat_map(move |q| {
                (0..np).map(move |p| (q, p, self.grade(q, p).unwrap_or(IRRELEVANT)))
            }))
        } else {
            Box::new(self.annotated())
        }
    }

    /// Dense grade row of one query over all products (unannotated = 0).
    pub fn grade_row(&self, q: u32) -> Vec<f64> {
        let mut row = vec![IRRELEVANT; self.products.len()];
        for (&(_, p), &g) in self.annotated.range((q, 0)..=(q, u32::MAX)) {
            row[p as usize] = g;
        }
        row
    }

    /// Expands to every query × product combination; unannotated pairs are
    /// irrelevant.
    pub fn expand_exhaustive(mut self) -> Self {
        self.exhaustive = true;
        self
    }

    /// Reads `query \t product_text \t label` lines.
    pub fn load_tsv(path: &Path, labels: &LabelMap) -> Result<Self> {
        let reader = BufReader::new(File::open(path)?);
        let mut j = Judgments::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 3 {
                return Err(Error::parse(path, i + 1, format!("expected 3 fields, found {}", f.len())));
            }
            if normalize(f[0]).is_empty() || normalize(f[1]).is_empty() {
                return Err(Error::parse(path, i + 1, "empty query or product"));
            }
            let g = labels.grade(f[2]).map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
            j.insert(f[0], f[1], g)?;
        }
        Ok(j)
    }

    /// Writes the annotated pairs as `query \t product \t grade`.
    pub fn write_tsv(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        for (q, p, g) in self.annotated() {
            writeln!(w, "{}\t{}\t{}", self.queries[q as usize], self.products[p as usize], g)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Texts and pairs that appeared in training.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct VisibilityManifest {
    pub seen_queries: HashSet<String>,
    pub seen_products: HashSet<String>,
    pub seen_pairs: HashSet<(String, String)>,
}

impl VisibilityManifest {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_query(&mut self, text: &str) {
        self.seen_queries.insert(normalize(text));
    }

    pub fn add_product(&mut self, text: &str) {
        self.seen_products.insert(normalize(text));
    }

    /// Marks a pair seen, along with its query and product.
    pub fn add_pair(&mut self, query: &str, product: &str) {
        let (q, p) = (normalize(query), normalize(product));
        self.seen_queries.insert(q.clone());
        self.seen_products.insert(p.clone());
        self.seen_pairs.insert((q, p));
    }

    pub fn from_graph(g: &ClickGraph) -> Self {
        let mut v = Self::new();
        for (q, p, _) in g.edges() {
            v.add_pair(g.query_text(q), g.product_text(p));
        }
        v
    }

    /// Adds everything a training dataset exposes to the model.
    pub fn add_dataset(&mut self, ds: &PairDataset) {
        for pair in ds {
            match pair.role {
                Role::Pq => self.add_pair(&pair.left, &pair.right),
                Role::Qq | Role::Unsup => {
                    self.add_query(&pair.left);
                    self.add_query(&pair.right);
                }
                Role::Pp => {
                    self.add_product(&pair.left);
                    self.add_product(&pair.right);
                }
            }
        }
    }

    pub fn is_consistent(&self) -> bool {
        self.seen_pairs
            .iter()
            .all(|(q, p)| self.seen_queries.contains(q) && self.seen_products.contains(p))
    }

    /// Lines `query \t text`, `product \t text`, `pair \t query \t product`,
    /// sorted so equal manifests serialize identically.
    pub fn write_tsv(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        let mut qs: Vec<_> = self.seen_queries.iter().collect();
        qs.sort();
        for q in qs {
            writeln!(w, "query\t{q}")?;
        }
        let mut ps: Vec<_> = self.seen_products.iter().collect();
        ps.sort();
        for p in ps {
            writeln!(w, "product\t{p}")?;
        }
        let mut pairs: Vec<_> = self.seen_pairs.iter().collect();
        pairs.sort();
        for (q, p) in pairs {
            writeln!(w, "pair\t{q}\t{p}")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load_tsv(path: &Path) -> Result<Self> {
        let reader = BufReader::new(File::open(path)?);
        let mut v = Self::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            match (f[0], f.len()) {
                ("query", 2) => v.add_query(f[1]),
                ("product", 2) => v.add_product(f[1]),
                ("pair", 3) => v.add_pair(f[1], f[2]),
                _ => {
                    return Err(Error::parse(
                        path,
                        i + 1,
                        "expected `query\\t..`, `product\\t..` or `pair\\t..\\t..`",
                    ))
                }
            }
        }
        Ok(v)
    }
}
