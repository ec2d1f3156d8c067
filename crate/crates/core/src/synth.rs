//! Synthetic click worlds with known topic structure.
//!
//! Every query and product belongs to one latent topic. Texts draw most of
//! their words from a Zipf-weighted topic vocabulary and the rest from a
//! shared generic pool. Products carry a brand word and a class name
//! derived from their topic. Click sessions pick a query by popularity and
//! click a same-topic product, except with probability `noise` when any
//! product may be clicked. Relevance ground truth is topic equality, or
//! sibling topics for partial relevance in hierarchy mode.

use std::collections::{BTreeMap, HashSet};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::click_graph::{ClickGraph, ClickGraphBuilder, ProductDoc};
use crate::error::{Error, Result};
use crate::eval::{Judgments, QueryPairGrade, VisibilityManifest, PARTIAL, RELEVANT};

#[derive(Debug, Clone, PartialEq)]
pub struct WorldConfig {
    pub num_topics: usize,
    pub num_queries: usize,
    pub num_products: usize,
    /// Words available to titles and queries; class names come on top.
    pub vocab_size: usize,
    pub tokens_per_text: usize,
    pub click_sessions: usize,
    pub noise: f64,
    /// Fraction of text words drawn from the topic vocabulary rather than
    /// the generic pool.
    pub topical_rate: f64,
    /// Queries and titles use disjoint halves of each topic vocabulary.
    pub split_dialects: bool,
    pub seed: u64,
    /// Group topics in sibling pairs sharing a class name; siblings are
    /// partially relevant.
    pub hierarchy: bool,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            num_topics: 8,
            num_queries: 400,
            num_products: 200,
            vocab_size: 500,
            tokens_per_text: 6,
            click_sessions: 50_000,
            noise: 0.1,
            topical_rate: 0.25,
            split_dialects: false,
            seed: 0,
            hierarchy: false,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("num_topics", self.num_topics),
            ("num_queries", self.num_queries),
            ("num_products", self.num_products),
            ("vocab_size", self.vocab_size),
            ("tokens_per_text", self.tokens_per_text),
            ("click_sessions", self.click_sessions),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be >= 1")));
        }
        if !(0.0..=1.0).contains(&self.noise) {
            return Err(Error::Config(format!("noise {} not in [0, 1]", self.noise)));
        }
        if !(0.0..=1.0).contains(&self.topical_rate) {
            return Err(Error::Config(format!("topical_rate {} not in [0, 1]", self.topical_rate)));
        }
        if self.vocab_size < self.num_topics {
            return Err(Error::Config("vocab_size must be >= num_topics".into()));
        }
        if self.num_products < self.num_topics {
            return Err(Error::Config(format!(
                "{} products cannot cover {} topics",
                self.num_products, self.num_topics
            )));
        }
        if self.num_queries < self.num_topics {
            return Err(Error::Config(format!(
                "{} queries cannot cover {} topics",
                self.num_queries, self.num_topics
            )));
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::Config(format!("bad value {v:?} for {key}")))
        }
        match key {
            "num_topics" => self.num_topics = num(key, value)?,
            "num_queries" => self.num_queries = num(key, value)?,
            "num_products" => self.num_products = num(key, value)?,
            "vocab_size" => self.vocab_size = num(key, value)?,
            "tokens_per_text" => self.tokens_per_text = num(key, value)?,
            "click_sessions" => self.click_sessions = num(key, value)?,
            "noise" => self.noise = num(key, value)?,
            "topical_rate" => self.topical_rate = num(key, value)?,
            "split_dialects" => self.split_dialects = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "hierarchy" => self.hierarchy = num(key, value)?,
            other => return Err(Error::Config(format!("unknown world key {other:?}"))),
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct World {
    pub config: WorldConfig,
    pub queries: Vec<String>,
    pub query_topic: Vec<usize>,
    pub products: Vec<ProductDoc>,
    pub product_topic: Vec<usize>,
    pub graph: ClickGraph,
}

impl World {
    fn parent(&self, topic: usize) -> usize {
        if self.config.hierarchy {
            topic / 2
        } else {
            topic
        }
    }

    /// 1 for same topic, 0.5 for sibling topics in hierarchy mode, else 0.
    pub fn relevance(&self, query: usize, product: usize) -> f64 {
        let (a, b) = (self.query_topic[query], self.product_topic[product]);
        if a == b {
            RELEVANT
        } else if self.config.hierarchy && self.parent(a) == self.parent(b) {
            PARTIAL
        } else {
            0.0
        }
    }

    /// Ground-truth similarity of two queries: 1 if same topic else 0.
    pub fn similarity(&self, q1: usize, q2: usize) -> f64 {
        f64::from(u8::from(self.query_topic[q1] == self.query_topic[q2]))
    }

    /// Graded query pairs: 3 identical, 2 same topic, 1 sibling topic,
    /// 0 unrelated. Pairs are drawn so the four grades appear about equally
    /// (grade 1 only in hierarchy mode).
    pub fn query_pair_annotations(&self, n: usize, seed: u64) -> Vec<QueryPairGrade> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nq = self.queries.len();
        let mut out = Vec::with_capacity(n);
        let levels: Vec<u8> = if self.config.hierarchy { vec![0, 1, 2, 3] } else { vec![0, 2, 3] };
        let mut attempts = 0usize;
        while out.len() < n && attempts < n * 1000 {
            attempts += 1;
            let want = levels[out.len() % levels.len()];
            let a = rng.random_range(0..nq);
            let b = if want == 3 { a } else { rng.random_range(0..nq) };
            let (ta, tb) = (self.query_topic[a], self.query_topic[b]);
            let grade = if a == b {
                3
            } else if ta == tb {
                2
            } else if self.config.hierarchy && self.parent(ta) == self.parent(tb) {
                1
            } else {
                0
            };
            if grade == want {
                out.push(QueryPairGrade {
                    first: self.queries[a].clone(),
                    second: self.queries[b].clone(),
                    grade,
                });
            }
        }
        out
    }
}

fn pseudo_words(n: usize, rng: &mut impl Rng, taken: &mut HashSet<String>) -> Vec<String> {
    const ONSETS: [&str; 16] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "ch", "st"];
    const VOWELS: [&str; 6] = ["a", "e", "i", "o", "u", "ay"];
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let syllables = 2 + usize::from(taken.len() > 2000) + rng.random_range(0..2);
        let mut w = String::new();
        for _ in 0..syllables {
            w.push_str(ONSETS[rng.random_range(0..ONSETS.len())]);
            w.push_str(VOWELS[rng.random_range(0..VOWELS.len())]);
        }
        if taken.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

fn zipf_weights(n: usize) -> Vec<f64> {
    (1..=n).map(|r| 1.0 / r as f64).collect()
}

struct TextSampler {
    topic_words: Vec<Vec<String>>,
    topic_dist: Vec<WeightedIndex<f64>>,
    generic: Vec<String>,
    topical_rate: f64,
}

impl TextSampler {
    fn sample(&self, topic: usize, len: usize, rng: &mut impl Rng) -> String {
        let mut words = Vec::with_capacity(len);
        for _ in 0..len {
            let w = if self.generic.is_empty() || rng.random_bool(self.topical_rate) {
                &self.topic_words[topic][self.topic_dist[topic].sample(rng)]
            } else {
                &self.generic[rng.random_range(0..self.generic.len())]
            };
            words.push(w.as_str());
        }
        words.join(" ")
    }
}

pub fn generate_world(cfg: &WorldConfig) -> Result<World> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut taken = HashSet::new();

    let generic_n = (cfg.vocab_size / 5).min(cfg.vocab_size - cfg.num_topics);
    let mut words = pseudo_words(cfg.vocab_size, &mut rng, &mut taken);
    let generic: Vec<String> = words.drain(..generic_n).collect();
    let per_topic = words.len() / cfg.num_topics;
    let topic_words: Vec<Vec<String>> = (0..cfg.num_topics)
        .map(|t| words[t * per_topic..(t + 1) * per_topic].to_vec())
        .collect();
    let sampler_over = |topic_words: Vec<Vec<String>>| TextSampler {
        topic_dist: topic_words
            .iter()
            .map(|ws| WeightedIndex::new(zipf_weights(ws.len())).expect("nonempty topic"))
            .collect(),
        topic_words,
        generic: generic.clone(),
        topical_rate: cfg.topical_rate,
    };
    let (query_sampler, product_sampler) = if cfg.split_dialects {
        // Alternate words so both sides get a share of the frequent ones.
        let side = |parity: usize| {
            topic_words
                .iter()
                .map(|ws| ws.iter().skip(parity).step_by(2).cloned().collect())
                .collect()
        };
        (sampler_over(side(0)), sampler_over(side(1)))
    } else {
        (sampler_over(topic_words.clone()), sampler_over(topic_words))
    };

    let n_classes = if cfg.hierarchy { cfg.num_topics.div_ceil(2) } else { cfg.num_topics };
    let class_names = pseudo_words(n_classes, &mut rng, &mut taken);
    let brands = pseudo_words((cfg.num_products / 10).max(1), &mut rng, &mut taken);

    let max_attempts = 1000;
    let mut seen_texts = HashSet::new();
    let mut queries = Vec::with_capacity(cfg.num_queries);
    let mut query_topic = Vec::with_capacity(cfg.num_queries);
    for i in 0..cfg.num_queries {
        let topic = i % cfg.num_topics;
        let text = (0..max_attempts)
            .map(|_| query_sampler.sample(topic, cfg.tokens_per_text, &mut rng))
            .find(|t| seen_texts.insert(t.clone()))
            .ok_or_else(|| Error::Config("vocabulary too small for distinct query texts".into()))?;
        queries.push(text);
        query_topic.push(topic);
    }

    let mut seen_docs = HashSet::new();
    let mut products = Vec::with_capacity(cfg.num_products);
    let mut product_topic = Vec::with_capacity(cfg.num_products);
    for i in 0..cfg.num_products {
        let topic = i % cfg.num_topics;
        let class = &class_names[if cfg.hierarchy { topic / 2 } else { topic }];
        let doc = (0..max_attempts)
            .map(|_| {
                let title = product_sampler.sample(topic, cfg.tokens_per_text, &mut rng);
                let brand = &brands[rng.random_range(0..brands.len())];
                ProductDoc::new(&title, brand, class)
            })
            .find(|d| seen_docs.insert(d.rendered.clone()))
            .ok_or_else(|| Error::Config("vocabulary too small for distinct product texts".into()))?;
        products.push(doc);
        product_topic.push(topic);
    }

    // Popularity: Zipf over a random permutation of ranks.
    let ranked = |n: usize, rng: &mut ChaCha8Rng| {
        let mut ranks: Vec<usize> = (1..=n).collect();
        ranks.shuffle(rng);
        ranks.into_iter().map(|r| 1.0 / r as f64).collect::<Vec<_>>()
    };
    let query_pop = WeightedIndex::new(ranked(cfg.num_queries, &mut rng)).expect("queries");
    let mut by_topic: Vec<Vec<usize>> = vec![Vec::new(); cfg.num_topics];
    for (p, &t) in product_topic.iter().enumerate() {
        by_topic[t].push(p);
    }
    let topic_pop: Vec<WeightedIndex<f64>> = by_topic
        .iter()
        .map(|ps| WeightedIndex::new(ranked(ps.len(), &mut rng)).expect("topic has products"))
        .collect();

    let mut clicks: BTreeMap<(usize, usize), u64> = BTreeMap::new();
    for _ in 0..cfg.click_sessions {
        let q = query_pop.sample(&mut rng);
        let p = if cfg.noise > 0.0 && rng.random_bool(cfg.noise) {
            rng.random_range(0..cfg.num_products)
        } else {
            let t = query_topic[q];
            by_topic[t][topic_pop[t].sample(&mut rng)]
        };
        *clicks.entry((q, p)).or_insert(0) += 1;
    }
    let mut builder = ClickGraphBuilder::new();
    for (&(q, p), &w) in &clicks {
        builder.add_click(&queries[q], &products[p], w)?;
    }

    Ok(World {
        config: cfg.clone(),
        queries,
        query_topic,
        products,
        product_topic,
        graph: builder.build(),
    })
}

/// Training graph and evaluation data after withholding some queries and
/// products from training.
#[derive(Debug, Clone)]
pub struct Split {
    pub train: ClickGraph,
    /// Every world query × product, graded by topic.
    pub judgments: Judgments,
    pub manifest: VisibilityManifest,
    pub withheld_queries: Vec<usize>,
    pub withheld_products: Vec<usize>,
    pub warnings: Vec<String>,
}

pub fn holdout_split(w: &World, frac_unseen_queries: f64, frac_unseen_products: f64, seed: u64) -> Result<Split> {
    for f in [frac_unseen_queries, frac_unseen_products] {
        if !(0.0..1.0).contains(&f) {
            return Err(Error::Config(format!("holdout fraction {f} not in [0, 1)")));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pick = |n: usize, frac: f64, rng: &mut ChaCha8Rng| {
        let mut ids: Vec<usize> = (0..n).collect();
        ids.shuffle(rng);
        let mut out: Vec<usize> = ids[..(frac * n as f64).round() as usize].to_vec();
        out.sort_unstable();
        out
    };
    let withheld_queries = pick(w.queries.len(), frac_unseen_queries, &mut rng);
    let withheld_products = pick(w.products.len(), frac_unseen_products, &mut rng);
    let hidden_q: HashSet<&str> = withheld_queries.iter().map(|&q| w.queries[q].as_str()).collect();
    let hidden_p: HashSet<&str> = withheld_products
        .iter()
        .map(|&p| w.products[p].rendered.as_str())
        .collect();

    let g = &w.graph;
    let mut builder = ClickGraphBuilder::new();
    for (q, p, c) in g.edges() {
        if hidden_q.contains(g.query_text(q)) || hidden_p.contains(g.product_text(p)) {
            continue;
        }
        builder.add_click(g.query_text(q), g.product(p), c)?;
    }
    let train = builder.build();
    if train.num_edges() == 0 {
        return Err(Error::Config("holdout split leaves an empty training graph".into()));
    }

    let mut judgments = Judgments::new();
    for q in &w.queries {
        judgments.intern_query(q);
    }
    for p in &w.products {
        judgments.intern_product(&p.rendered);
    }
    for (qi, q) in w.queries.iter().enumerate() {
        for (pi, p) in w.products.iter().enumerate() {
            let g = w.relevance(qi, pi);
            if g > 0.0 {
                judgments.insert(q, &p.rendered, g)?;
            }
        }
    }
    let judgments = judgments.expand_exhaustive();
    let manifest = VisibilityManifest::from_graph(&train);

    let asg = crate::eval::assign_buckets(&judgments, &manifest);
    let counts = asg.counts(&judgments);
    let mut warnings = Vec::new();
    for b in crate::eval::BucketId::ALL {
        if counts[b.index() - 1] == 0 {
            let msg = format!("bucket {} ({}) is empty", b.index(), b.name());
            log::warn!("{msg}");
            warnings.push(msg);
        }
    }
    Ok(Split {
        train,
        judgments,
        manifest,
        withheld_queries,
        withheld_products,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> WorldConfig {
        WorldConfig {
            num_topics: 3,
            num_queries: 30,
            num_products: 15,
            vocab_size: 60,
            tokens_per_text: 4,
            click_sessions: 2000,
            noise: 0.1,
            topical_rate: 0.7,
            split_dialects: false,
            seed: 5,
            hierarchy: false,
        }
    }

    #[test]
    fn one_topic_everything_relevant() {
        let w = generate_world(&WorldConfig { num_topics: 1, ..small() }).unwrap();
        for q in 0..w.queries.len() {
            for p in 0..w.products.len() {
                assert_eq!(w.relevance(q, p), 1.0);
            }
            assert_eq!(w.similarity(q, 0), 1.0);
        }
    }

    #[test]
    fn noiseless_edges_stay_in_topic() {
        let w = generate_world(&WorldConfig { noise: 0.0, ..small() }).unwrap();
        let g = &w.graph;
        let qt: std::collections::HashMap<&str, usize> =
            w.queries.iter().map(String::as_str).zip(w.query_topic.iter().copied()).collect();
        let pt: std::collections::HashMap<&str, usize> = w
            .products
            .iter()
            .map(|d| d.rendered.as_str())
            .zip(w.product_topic.iter().copied())
            .collect();
        for (q, p, _) in g.edges() {
            assert_eq!(qt[g.query_text(q)], pt[g.product_text(p)]);
        }
    }

    #[test]
    fn deterministic() {
        let a = generate_world(&small()).unwrap();
        let b = generate_world(&small()).unwrap();
        assert_eq!(a.graph, b.graph);
        assert_eq!(a.queries, b.queries);
        let sa = holdout_split(&a, 0.3, 0.3, 1).unwrap();
        let sb = holdout_split(&b, 0.3, 0.3, 1).unwrap();
        assert_eq!(sa.train, sb.train);
        assert_eq!(sa.judgments, sb.judgments);
        assert_eq!(sa.manifest, sb.manifest);
    }

    #[test]
    fn infeasible_configs() {
        assert!(generate_world(&WorldConfig { num_products: 2, ..small() }).is_err());
        assert!(generate_world(&WorldConfig { vocab_size: 2, ..small() }).is_err());
        assert!(generate_world(&WorldConfig { noise: 1.5, ..small() }).is_err());
        assert!(generate_world(&WorldConfig { click_sessions: 0, ..small() }).is_err());
    }

    #[test]
    fn split_invariants() {
        let w = generate_world(&small()).unwrap();
        let s = holdout_split(&w, 0.3, 0.3, 2).unwrap();
        for &q in &s.withheld_queries {
            assert!(s.train.query_id(&w.queries[q]).is_none());
        }
        for &p in &s.withheld_products {
            assert!(s.train.product_id(&w.products[p].rendered).is_none());
        }
        assert!(s.manifest.is_consistent());
        assert_eq!(s.judgments.len(), 30 * 15);
        assert!(holdout_split(&w, 1.0, 0.0, 0).is_err());
    }

    #[test]
    fn no_holdout_warns_about_unseen_query_buckets() {
        let w = generate_world(&WorldConfig { click_sessions: 20_000, ..small() }).unwrap();
        let s = holdout_split(&w, 0.0, 0.0, 0).unwrap();
        assert!(s.warnings.iter().any(|m| m.contains("bucket 6")));
        assert!(s.warnings.iter().any(|m| m.contains("bucket 7")));
    }

    #[test]
    fn hierarchy_has_partial_grades() {
        let w = generate_world(&WorldConfig { num_topics: 4, hierarchy: true, ..small() }).unwrap();
        let s = holdout_split(&w, 0.2, 0.2, 0).unwrap();
        assert!(s.judgments.pairs().any(|(_, _, g)| g == 0.5));
        let ann = w.query_pair_annotations(40, 1);
        assert_eq!(ann.len(), 40);
        for g in 0..=3u8 {
            assert_eq!(ann.iter().filter(|a| a.grade == g).count(), 10);
        }
    }
}
