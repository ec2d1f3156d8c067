//! Weighted bipartite click graph between search queries and products.
//!
//! Queries and products are interned from normalized text, so two rows that
//! differ only in case or spacing land on the same node. Edge weights are
//! summed click counts. Adjacency lists are sorted once at build time and the
//! graph is read-only afterwards.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::text::normalize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct QueryId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ProductId(pub u32);

impl fmt::Display for QueryId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "q{}", self.0)
    }
}

impl fmt::Display for ProductId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "p{}", self.0)
    }
}

/// A product as the encoder sees it: title, brand and class name joined
/// with ", ", skipping empty fields.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ProductDoc {
    pub title: String,
    pub brand: String,
    pub class_name: String,
    pub rendered: String,
}

impl ProductDoc {
    pub fn new(title: &str, brand: &str, class_name: &str) -> Self {
        let title = normalize(title);
        let brand = normalize(brand);
        let class_name = normalize(class_name);
        let rendered = [&title, &brand, &class_name]
            .iter()
            .filter(|s| !s.is_empty())
            .map(|s| s.as_str())
            .collect::<Vec<_>>()
            .join(", ");
        ProductDoc {
            title,
            brand,
            class_name,
            rendered,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.rendered.is_empty()
    }
}

#[derive(Debug, Default)]
pub struct ClickGraphBuilder {
    queries: Vec<String>,
    query_index: HashMap<String, QueryId>,
    products: Vec<ProductDoc>,
    product_index: HashMap<String, ProductId>,
    edges: BTreeMap<(QueryId, ProductId), u64>,
}

impl ClickGraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records `count` clicks of `product` under `query`. Zero counts and
    /// empty texts are rejected.
    pub fn add_click(&mut self, query: &str, product: &ProductDoc, count: u64) -> Result<()> {
        let query = normalize(query);
        if query.is_empty() {
            return Err(Error::Empty("query text"));
        }
        if product.is_empty() {
            return Err(Error::Empty("product text"));
        }
        if count == 0 {
            return Err(Error::Config("click count must be >= 1".into()));
        }
        let q = match self.query_index.get(&query) {
            Some(&q) => q,
            None => {
                let q = QueryId(self.queries.len() as u32);
                self.query_index.insert(query.clone(), q);
                self.queries.push(query);
                q
            }
        };
        let p = match self.product_index.get(&product.rendered) {
            Some(&p) => p,
            None => {
                let p = ProductId(self.products.len() as u32);
                self.product_index.insert(product.rendered.clone(), p);
                self.products.push(product.clone());
                p
            }
        };
        *self.edges.entry((q, p)).or_insert(0) += count;
        Ok(())
    }

    pub fn build(self) -> ClickGraph {
        let mut query_adj = vec![Vec::new(); self.queries.len()];
        let mut product_adj = vec![Vec::new(); self.products.len()];
        let mut product_adj_ranked = vec![Vec::new(); self.products.len()];
        let mut query_weight = vec![0u64; self.queries.len()];
        let mut product_weight = vec![0u64; self.products.len()];
        for (&(q, p), &w) in &self.edges {
            query_adj[q.0 as usize].push((p, w));
            // BTreeMap order keeps these ascending by query id.
            product_adj[p.0 as usize].push(q);
            product_adj_ranked[p.0 as usize].push((q, w));
            query_weight[q.0 as usize] += w;
            product_weight[p.0 as usize] += w;
        }
        for adj in &mut query_adj {
            adj.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        }
        for adj in &mut product_adj_ranked {
            adj.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        }
        ClickGraph {
            queries: self.queries,
            query_index: self.query_index,
            products: self.products,
            product_index: self.product_index,
            edges: self.edges,
            query_adj,
            product_adj,
            product_adj_ranked,
            query_weight,
            product_weight,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClickGraph {
    queries: Vec<String>,
    query_index: HashMap<String, QueryId>,
    products: Vec<ProductDoc>,
    product_index: HashMap<String, ProductId>,
    edges: BTreeMap<(QueryId, ProductId), u64>,
    /// Per query: neighbors by descending weight, ties by ascending id.
    query_adj: Vec<Vec<(ProductId, u64)>>,
    /// Per product: neighbors by ascending id.
    product_adj: Vec<Vec<QueryId>>,
    /// Per product: neighbors by descending weight, ties by ascending id.
    product_adj_ranked: Vec<Vec<(QueryId, u64)>>,
    query_weight: Vec<u64>,
    product_weight: Vec<u64>,
}

/// P(q) proportional to the total click weight incident to q.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryDistribution {
    weights: Vec<u64>,
    total: u64,
}

impl QueryDistribution {
    pub fn weights(&self) -> &[u64] {
        &self.weights
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn prob(&self, q: QueryId) -> f64 {
        self.weights[q.0 as usize] as f64 / self.total as f64
    }

    pub fn probs(&self) -> Vec<f64> {
        let total = self.total as f64;
        self.weights.iter().map(|&w| w as f64 / total).collect()
    }
}

impl ClickGraph {
    pub fn num_queries(&self) -> usize {
        self.queries.len()
    }

    pub fn num_products(&self) -> usize {
        self.products.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn query_ids(&self) -> impl Iterator<Item = QueryId> {
        (0..self.queries.len() as u32).map(QueryId)
    }

    pub fn product_ids(&self) -> impl Iterator<Item = ProductId> {
        (0..self.products.len() as u32).map(ProductId)
    }

    pub fn query_text(&self, q: QueryId) -> &str {
        &self.queries[q.0 as usize]
    }

    pub fn product(&self, p: ProductId) -> &ProductDoc {
        &self.products[p.0 as usize]
    }

    pub fn product_text(&self, p: ProductId) -> &str {
        &self.products[p.0 as usize].rendered
    }

    pub fn query_id(&self, text: &str) -> Option<QueryId> {
        self.query_index.get(&normalize(text)).copied()
    }

    pub fn product_id(&self, rendered: &str) -> Option<ProductId> {
        self.product_index.get(&normalize(rendered)).copied()
    }

    pub fn weight(&self, q: QueryId, p: ProductId) -> Option<u64> {
        self.edges.get(&(q, p)).copied()
    }

    /// All edges in ascending (query, product) order.
    pub fn edges(&self) -> impl Iterator<Item = (QueryId, ProductId, u64)> + '_ {
        self.edges.iter().map(|(&(q, p), &w)| (q, p, w))
    }

    pub fn total_weight(&self) -> u64 {
        self.query_weight.iter().sum()
    }

    pub fn query_distribution(&self) -> Result<QueryDistribution> {
        let total = self.total_weight();
        if self.edges.is_empty() || total == 0 {
            return Err(Error::EmptyGraph);
        }
        Ok(QueryDistribution {
            weights: self.query_weight.clone(),
            total,
        })
    }

    /// Neighbors of `q` by descending click weight, ties by ascending id.
    pub fn top_k_products(&self, q: QueryId, k: usize) -> Result<Vec<ProductId>> {
        let adj = self
            .query_adj
            .get(q.0 as usize)
            .ok_or(Error::UnknownQuery(q.0))?;
        Ok(adj.iter().take(k).map(|&(p, _)| p).collect())
    }

    /// Every query that clicked `p`, ascending by id.
    pub fn queries_of(&self, p: ProductId) -> Result<&[QueryId]> {
        self.product_adj
            .get(p.0 as usize)
            .map(Vec::as_slice)
            .ok_or(Error::UnknownProduct(p.0))
    }

    /// Popularity of each product: total incident click weight.
    pub fn product_weights(&self) -> &[u64] {
        &self.product_weight
    }

    /// Popularity of each query: total incident click weight.
    pub fn query_weights(&self) -> &[u64] {
        &self.query_weight
    }

    /// Neighbors of `p` by descending click weight, ties by ascending id.
    pub fn top_k_queries(&self, p: ProductId, k: usize) -> Result<Vec<QueryId>> {
        let adj = self
            .product_adj_ranked
            .get(p.0 as usize)
            .ok_or(Error::UnknownProduct(p.0))?;
        Ok(adj.iter().take(k).map(|&(q, _)| q).collect())
    }

    /// Products of `q` by descending weight (ties by id) together with weights.
    pub fn products_of(&self, q: QueryId) -> Result<&[(ProductId, u64)]> {
        self.query_adj
            .get(q.0 as usize)
            .map(Vec::as_slice)
            .ok_or(Error::UnknownQuery(q.0))
    }

    /// Writes the graph in click-log TSV form, one row per edge.
    pub fn write_click_log(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        for (q, p, count) in self.edges() {
            let doc = self.product(p);
            writeln!(
                w,
                "{}\t{}\t{}\t{}\t{}",
                self.query_text(q),
                doc.title,
                doc.brand,
                doc.class_name,
                count
            )?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Loads `query \t title \t brand \t class \t count` rows. Lines starting with
/// `#` and blank lines are skipped; duplicate (query, product) rows add up.
pub fn load_click_log(path: &Path) -> Result<ClickGraph> {
    let reader = BufReader::new(File::open(path)?);
    let mut builder = ClickGraphBuilder::new();
    let mut rows = 0usize;
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 5 {
            return Err(Error::parse(
                path,
                lineno,
                format!("expected 5 tab-separated fields, found {}", fields.len()),
            ));
        }
        let count: u64 = fields[4]
            .trim()
            .parse()
            .map_err(|_| Error::parse(path, lineno, format!("bad click count {:?}", fields[4])))?;
        let doc = ProductDoc::new(fields[1], fields[2], fields[3]);
        builder
            .add_click(fields[0], &doc, count)
            .map_err(|e| Error::parse(path, lineno, e.to_string()))?;
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::EmptyClickLog);
    }
    Ok(builder.build())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    fn doc(t: &str) -> ProductDoc {
        ProductDoc::new(t, "", "")
    }

    #[test]
    fn rendered_skips_empty_fields() {
        assert_eq!(ProductDoc::new("Wing Chair", "", "Accent Chairs").rendered, "wing chair, accent chairs");
        assert_eq!(
            ProductDoc::new("alyka adonis wingback chair", "red barrel studior", "accent chairs").rendered,
            "alyka adonis wingback chair, red barrel studior, accent chairs"
        );
    }

    #[test]
    fn single_row() {
        let f = write_tmp("red sofa\tsofa a\tacme\tsofas\t3\n");
        let g = load_click_log(f.path()).unwrap();
        assert_eq!((g.num_queries(), g.num_products(), g.num_edges()), (1, 1, 1));
        assert_eq!(g.weight(QueryId(0), ProductId(0)), Some(3));
    }

    #[test]
    fn duplicate_rows_sum() {
        let f = write_tmp("# comment\nred sofa\tsofa a\tacme\tsofas\t2\n\nRed  Sofa\tsofa a\tacme\tsofas\t5\n");
        let g = load_click_log(f.path()).unwrap();
        assert_eq!(g.num_edges(), 1);
        assert_eq!(g.weight(QueryId(0), ProductId(0)), Some(7));
    }

    #[test]
    fn malformed_row_reports_line() {
        let f = write_tmp("a\tb\tc\td\t1\nbroken row\n");
        match load_click_log(f.path()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        let f = write_tmp("a\tb\tc\td\t0\n");
        assert!(matches!(load_click_log(f.path()), Err(Error::Parse { line: 1, .. })));
        let f = write_tmp("a\tb\tc\td\tmany\n");
        assert!(matches!(load_click_log(f.path()), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn empty_file() {
        let f = write_tmp("# only a comment\n\n");
        let err = load_click_log(f.path()).unwrap_err();
        assert_eq!(err.to_string(), "empty click log");
    }

    #[test]
    fn query_distribution_normalizes() {
        let mut b = ClickGraphBuilder::new();
        b.add_click("q1", &doc("p"), 3).unwrap();
        b.add_click("q2", &doc("p"), 1).unwrap();
        let d = b.build().query_distribution().unwrap();
        assert_eq!(d.probs(), vec![0.75, 0.25]);

        let mut b = ClickGraphBuilder::new();
        b.add_click("only", &doc("p"), 9).unwrap();
        assert_eq!(b.build().query_distribution().unwrap().probs(), vec![1.0]);

        assert!(matches!(
            ClickGraphBuilder::new().build().query_distribution(),
            Err(Error::EmptyGraph)
        ));
    }

    #[test]
    fn top_k_tie_break() {
        let mut b = ClickGraphBuilder::new();
        b.add_click("q", &doc("p1"), 5).unwrap();
        b.add_click("q", &doc("p2"), 9).unwrap();
        b.add_click("q", &doc("p3"), 9).unwrap();
        let g = b.build();
        let q = g.query_id("q").unwrap();
        let p2 = g.product_id("p2").unwrap();
        let p3 = g.product_id("p3").unwrap();
        assert_eq!(g.top_k_products(q, 2).unwrap(), vec![p2, p3]);
        assert_eq!(g.top_k_products(q, 10).unwrap().len(), 3);
        assert!(matches!(g.top_k_products(QueryId(7), 1), Err(Error::UnknownQuery(7))));
    }

    #[test]
    fn queries_of_product() {
        let mut b = ClickGraphBuilder::new();
        b.add_click("q1", &doc("p"), 1).unwrap();
        b.add_click("q2", &doc("p"), 4).unwrap();
        b.add_click("q2", &doc("other"), 4).unwrap();
        let g = b.build();
        let p = g.product_id("p").unwrap();
        assert_eq!(g.queries_of(p).unwrap(), &[QueryId(0), QueryId(1)]);
        assert!(matches!(g.queries_of(ProductId(5)), Err(Error::UnknownProduct(5))));
    }

    #[test]
    fn load_is_idempotent_and_roundtrips_counts() {
        let f = write_tmp("a\tx\t\t\t1\nb\tx\t\t\t2\na\ty\tbrand\tcls\t4\n");
        let g1 = load_click_log(f.path()).unwrap();
        let g2 = load_click_log(f.path()).unwrap();
        assert_eq!(g1, g2);

        let out = tempfile::NamedTempFile::new().unwrap();
        g1.write_click_log(out.path()).unwrap();
        let g3 = load_click_log(out.path()).unwrap();
        assert_eq!(g3.total_weight(), g1.total_weight());
        assert_eq!(g3.num_edges(), g1.num_edges());
    }
}
