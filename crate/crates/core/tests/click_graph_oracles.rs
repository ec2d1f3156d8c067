use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use coclick::{load_click_log, ClickGraph, ClickGraphBuilder, ProductDoc, QueryId};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const WORDS: [&str; 8] = ["Red", "sofa", "OAK", "table", "lamp", "rug", "chair", "desk"];

fn phrase(rng: &mut ChaCha8Rng) -> String {
    let n = rng.random_range(1..3);
    let words: Vec<&str> = (0..n).map(|_| WORDS[rng.random_range(0..WORDS.len())]).collect();
    // Irregular spacing and case must not create new nodes.
    words.join(if rng.random_bool(0.2) { "  " } else { " " })
}

fn random_log(seed: u64, rows: usize) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = String::from("# query\ttitle\tbrand\tclass\tcount\n");
    for _ in 0..rows {
        let brand = if rng.random_bool(0.3) { String::new() } else { format!("brand{}", rng.random_range(0..3)) };
        s += &format!(
            "{}\t{}\t{}\t{}\t{}\n",
            phrase(&mut rng),
            phrase(&mut rng),
            brand,
            ["Sofas", "Tables"][rng.random_range(0..2)],
            rng.random_range(1..5)
        );
    }
    s
}

fn write(contents: &str) -> tempfile::NamedTempFile {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    f.write_all(contents.as_bytes()).unwrap();
    f
}

/// Node and edge tallies recomputed by scanning the raw lines.
struct LineScan {
    queries: BTreeSet<String>,
    products: BTreeSet<String>,
    edges: BTreeMap<(String, String), u64>,
}

fn canon(s: &str) -> String {
    s.split_whitespace().map(str::to_lowercase).collect::<Vec<_>>().join(" ")
}

fn line_scan(log: &str) -> LineScan {
    let mut out = LineScan { queries: BTreeSet::new(), products: BTreeSet::new(), edges: BTreeMap::new() };
    for line in log.lines().filter(|l| !l.starts_with('#')) {
        let f: Vec<&str> = line.split('\t').collect();
        let q = canon(f[0]);
        let p = [canon(f[1]), canon(f[2]), canon(f[3])]
            .into_iter()
            .filter(|x| !x.is_empty())
            .collect::<Vec<_>>()
            .join(", ");
        out.queries.insert(q.clone());
        out.products.insert(p.clone());
        *out.edges.entry((q, p)).or_insert(0) += f[4].parse::<u64>().unwrap();
    }
    out
}

#[test]
fn loader_matches_line_scan() {
    for seed in 0..5 {
        let log = random_log(seed, 1000);
        let f = write(&log);
        let g = load_click_log(f.path()).unwrap();
        let oracle = line_scan(&log);
        assert_eq!(g.num_queries(), oracle.queries.len());
        assert_eq!(g.num_products(), oracle.products.len());
        assert_eq!(g.num_edges(), oracle.edges.len());
        for ((q, p), w) in &oracle.edges {
            let (qi, pi) = (g.query_id(q).unwrap(), g.product_id(p).unwrap());
            assert_eq!(g.weight(qi, pi), Some(*w));
        }
        assert_eq!(load_click_log(f.path()).unwrap(), g, "loading is idempotent");
    }
}

#[test]
fn small_logs() {
    let g = load_click_log(write("red sofa\tVelvet Sofa\tAcme\tSofas\t3\n").path()).unwrap();
    assert_eq!((g.num_queries(), g.num_products(), g.num_edges()), (1, 1, 1));
    assert_eq!(g.edges().next().unwrap().2, 3);
    let g = load_click_log(write("a\tb\t\t\t2\nA \tb\t\t\t5\n").path()).unwrap();
    assert_eq!(g.num_edges(), 1);
    assert_eq!(g.edges().next().unwrap().2, 7);
}

#[test]
fn loader_errors_carry_line_numbers() {
    let err = load_click_log(write("# c\nq\tt\tb\tc\t1\nq\tt\tb\n").path()).unwrap_err();
    assert!(err.to_string().contains(":3"), "{err}");
    let err = load_click_log(write("q\tt\tb\tc\tzero\n").path()).unwrap_err();
    assert!(err.to_string().contains(":1"), "{err}");
    let err = load_click_log(write("q\tt\tb\tc\t0\n").path()).unwrap_err();
    assert!(err.to_string().contains(":1"), "{err}");
    let err = load_click_log(write("# only a comment\n\n").path()).unwrap_err();
    assert_eq!(err.to_string(), "empty click log");
}

fn graph_from_rows(rows: &[(u8, u8, u64)]) -> ClickGraph {
    let mut b = ClickGraphBuilder::new();
    for &(q, p, w) in rows {
        b.add_click(&format!("query {q}"), &ProductDoc::new(&format!("product {p}"), "", ""), w).unwrap();
    }
    b.build()
}

fn rows_strategy() -> impl Strategy<Value = Vec<(u8, u8, u64)>> {
    prop::collection::vec((0u8..12, 0u8..9, 1u64..20), 1..60)
}

proptest! {
    #[test]
    fn distribution_matches_integer_sums(rows in rows_strategy()) {
        let g = graph_from_rows(&rows);
        let dist = g.query_distribution().unwrap();
        let total: u64 = rows.iter().map(|r| r.2).sum();
        let probs = dist.probs();
        prop_assert!((probs.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        for q in g.query_ids() {
            let text = g.query_text(q);
            let w: u64 = rows.iter().filter(|r| format!("query {}", r.0) == text).map(|r| r.2).sum();
            prop_assert!((dist.prob(q) - w as f64 / total as f64).abs() <= 1e-12);
        }
    }

    #[test]
    fn top_k_is_sorted_prefix(rows in rows_strategy(), k in 1usize..6) {
        let g = graph_from_rows(&rows);
        for q in g.query_ids() {
            let mut all: Vec<(u64, u32)> = g.edges().filter(|e| e.0 == q).map(|(_, p, w)| (w, p.0)).collect();
            all.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
            let want: Vec<u32> = all.iter().take(k).map(|x| x.1).collect();
            let got: Vec<u32> = g.top_k_products(q, k).unwrap().iter().map(|p| p.0).collect();
            prop_assert_eq!(got, want);
            // With unbounded k the result is a permutation of the adjacency.
            let mut full: Vec<u32> = g.top_k_products(q, usize::MAX).unwrap().iter().map(|p| p.0).collect();
            full.sort();
            let mut adj: Vec<u32> = all.iter().map(|x| x.1).collect();
            adj.sort();
            prop_assert_eq!(full, adj);
        }
    }

    #[test]
    fn queries_of_matches_edge_scan(rows in rows_strategy()) {
        let g = graph_from_rows(&rows);
        for p in g.product_ids() {
            let want: BTreeSet<QueryId> = g.edges().filter(|e| e.1 == p).map(|e| e.0).collect();
            let got: BTreeSet<QueryId> = g.queries_of(p).unwrap().iter().copied().collect();
            prop_assert_eq!(got, want);
        }
    }

    #[test]
    fn written_logs_reload_identically(rows in rows_strategy()) {
        let g = graph_from_rows(&rows);
        let f = tempfile::NamedTempFile::new().unwrap();
        g.write_click_log(f.path()).unwrap();
        let back = load_click_log(f.path()).unwrap();
        prop_assert_eq!(back.num_edges(), g.num_edges());
        for (q, p, w) in g.edges() {
            let (bq, bp) = (back.query_id(g.query_text(q)).unwrap(), back.product_id(g.product_text(p)).unwrap());
            prop_assert_eq!(back.weight(bq, bp), Some(w));
        }
    }
}

#[test]
fn documented_examples() {
    let g = graph_from_rows(&[(1, 1, 3), (2, 1, 1)]);
    let d = g.query_distribution().unwrap();
    let q1 = g.query_id("query 1").unwrap();
    assert_eq!(d.prob(q1), 0.75);
    let g = graph_from_rows(&[(0, 1, 5), (0, 2, 9), (0, 3, 9)]);
    let q = g.query_id("query 0").unwrap();
    let top: Vec<&str> = g.top_k_products(q, 2).unwrap().into_iter().map(|p| g.product_text(p)).collect();
    assert_eq!(top, ["product 2", "product 3"]);
    assert!(g.top_k_products(QueryId(99), 2).is_err());
    assert!(g.queries_of(coclick::ProductId(99)).is_err());
    assert!(ClickGraphBuilder::new().build().query_distribution().is_err());
}
