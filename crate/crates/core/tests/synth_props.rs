use std::collections::HashMap;

use coclick::eval::assign_buckets;
use coclick::synth::{generate_world, holdout_split, WorldConfig};

#[test]
fn off_topic_clicks_follow_noise_rate() {
    let cfg = WorldConfig { num_topics: 4, num_queries: 40, num_products: 40, click_sessions: 100_000, noise: 0.2, seed: 3, ..WorldConfig::default() };
    let w = generate_world(&cfg).unwrap();
    let qi: HashMap<&str, usize> = w.queries.iter().enumerate().map(|(i, q)| (q.as_str(), i)).collect();
    let pi: HashMap<&str, usize> = w.products.iter().enumerate().map(|(i, p)| (p.rendered.as_str(), i)).collect();
    let g = &w.graph;
    let (mut off, mut total) = (0u64, 0u64);
    for (q, p, c) in g.edges() {
        total += c;
        if w.relevance(qi[g.query_text(q)], pi[g.product_text(p)]) == 0.0 {
            off += c;
        }
    }
    assert_eq!(total, 100_000);
    // A noisy click lands on a uniform product, which is off topic 3 times in 4.
    let p = 0.2 * 0.75;
    let sigma = (total as f64 * p * (1.0 - p)).sqrt();
    assert!((off as f64 - total as f64 * p).abs() < 3.0 * sigma, "off-topic clicks {off}");
}

#[test]
fn default_split_fills_every_bucket() {
    let w = generate_world(&WorldConfig::default()).unwrap();
    let s = holdout_split(&w, 0.3, 0.3, 0).unwrap();
    assert!(s.warnings.is_empty(), "{:?}", s.warnings);
    let counts = assign_buckets(&s.judgments, &s.manifest).counts(&s.judgments);
    assert!(counts.iter().all(|&c| c > 0), "{counts:?}");
    assert_eq!(counts[0], (w.queries.len() * w.products.len()) as u64);
}

#[test]
fn zero_holdout_warns() {
    let cfg = WorldConfig { num_queries: 60, num_products: 30, click_sessions: 3000, ..WorldConfig::default() };
    let w = generate_world(&cfg).unwrap();
    let s = holdout_split(&w, 0.0, 0.0, 0).unwrap();
    assert!(s.warnings.iter().any(|m| m.contains("bucket 7")), "{:?}", s.warnings);
    assert!(s.withheld_queries.is_empty() && s.withheld_products.is_empty());
}

#[test]
fn training_graph_excludes_withheld_items() {
    let cfg = WorldConfig { num_queries: 80, num_products: 40, click_sessions: 5000, seed: 8, ..WorldConfig::default() };
    let w = generate_world(&cfg).unwrap();
    let s = holdout_split(&w, 0.25, 0.2, 8).unwrap();
    assert_eq!(s.withheld_queries.len(), 20);
    assert_eq!(s.withheld_products.len(), 8);
    for &q in &s.withheld_queries {
        assert!(s.train.query_id(&w.queries[q]).is_none());
        assert!(!s.manifest.seen_queries.contains(&w.queries[q]));
    }
    for &p in &s.withheld_products {
        assert!(s.train.product_id(&w.products[p].rendered).is_none());
    }
    assert!(s.manifest.is_consistent());
}

#[test]
fn worlds_are_reproducible() {
    let cfg = WorldConfig { num_queries: 50, num_products: 25, click_sessions: 2000, seed: 77, ..WorldConfig::default() };
    let (a, b) = (generate_world(&cfg).unwrap(), generate_world(&cfg).unwrap());
    assert_eq!(a.queries, b.queries);
    assert_eq!(a.graph, b.graph);
    let c = generate_world(&WorldConfig { seed: 78, ..cfg }).unwrap();
    assert_ne!(a.queries, c.queries);
}
