//! Latent topic machinery: the global topic bank, per-image topic
//! specialization via cross-attention, per-feature and per-image topic
//! distributions, covisible-topic selection, and topic sampling.

use rand::Rng;

use crate::autograd::{Graph, Tensor, Var};
use crate::config::RunConfig;
use crate::error::Result;
use crate::layers::AttentionBlock;
use crate::params::{Binding, Init, ParamId, ParamStore};
use crate::rng::{stream, tag};

pub const TOPIC_ATTENTION_LABEL: &str = "topic.attention";

/// Global topic bank plus the cross-attention stack that specializes it to an
/// image. Topic ids are 0-based throughout.
pub struct TopicModule {
    pub bank: ParamId,
    pub layers: Vec<AttentionBlock>,
}

impl TopicModule {
    pub fn new(store: &mut ParamStore, cfg: &RunConfig, seed: u64) -> Self {
        let bank = store.register(
            "topics.bank",
            vec![cfg.topics, cfg.coarse_dim],
            Init::Normal(0.5),
            seed,
            true,
        );
        let layers = (0..cfg.topic_layers)
            .map(|i| {
                AttentionBlock::new(
                    store,
                    &format!("topics.layer{i}"),
                    cfg.coarse_dim,
                    cfg.heads_coarse,
                    cfg.kernel_topic,
                    seed,
                )
            })
            .collect();
        TopicModule { bank, layers }
    }

    /// Specialize the global topics to one image: each bank row attends over
    /// the image's coarse tokens. Rows are computed independently of each
    /// other (cross-attention only, no mixing between topics).
    pub fn infer_local_topics(&self, g: &Graph, bind: &Binding, tokens: Var) -> Result<Var> {
        let mut state = bind.var(self.bank);
        for layer in &self.layers {
            state = layer.forward(g, bind, state, tokens, TOPIC_ATTENTION_LABEL)?;
        }
        Ok(state)
    }
}

/// Per-feature topic distribution: softmax over topics of
/// `<local_topic, feature> / sqrt(d)`. Rows are non-negative and sum to 1.
pub fn topic_distribution(g: &Graph, local_topics: Var, tokens: Var) -> Var {
    let d = g.shape_of(local_topics)[1];
    let logits = g.matmul_flags(tokens, false, local_topics, true, "topic.similarity");
    let logits = g.scale(logits, 1.0 / (d as f64).sqrt());
    g.softmax_rows(logits)
}

/// Uniform aggregation of per-feature distributions into one per-image
/// distribution over topics.
pub fn image_topic_distribution(g: &Graph, theta: Var) -> Var {
    g.col_mean(theta)
}

/// Covisible probabilities and the selected topic set.
#[derive(Clone, Debug)]
pub struct CovisibleReport {
    /// Elementwise product of the two image distributions.
    pub probabilities: Vec<f64>,
    /// The `k_co` largest entries, ties to the lower id; sorted ascending.
    pub selected: Vec<usize>,
}

pub fn covisible_topics(img_a: &[f64], img_b: &[f64], k_co: usize) -> CovisibleReport {
    assert_eq!(img_a.len(), img_b.len());
    assert!(k_co >= 1 && k_co <= img_a.len(), "k_co out of range");
    let probabilities: Vec<f64> = img_a.iter().zip(img_b).map(|(a, b)| a * b).collect();
    let mut order: Vec<usize> = (0..probabilities.len()).collect();
    order.sort_by(|&i, &j| {
        probabilities[j].partial_cmp(&probabilities[i]).unwrap().then(i.cmp(&j))
    });
    let mut selected: Vec<usize> = order[..k_co].to_vec();
    selected.sort_unstable();
    CovisibleReport { probabilities, selected }
}

/// Distribution of the pair topic variable over `{topics..., NaN}` where the
/// NaN outcome means the two features share no topic.
#[derive(Clone, Debug)]
pub struct PairTopicDistribution {
    pub per_topic: Vec<f64>,
    pub p_nan: f64,
}

impl PairTopicDistribution {
    pub fn total(&self) -> f64 {
        self.per_topic.iter().sum::<f64>() + self.p_nan
    }
}

pub fn pair_topic_distribution(theta_i: &[f64], theta_j: &[f64]) -> PairTopicDistribution {
    assert_eq!(theta_i.len(), theta_j.len());
    let per_topic: Vec<f64> = theta_i.iter().zip(theta_j).map(|(a, b)| a * b).collect();
    let joint: f64 = per_topic.iter().sum();
    // For valid rows the joint mass cannot exceed 1; clamp float dust.
    let p_nan = (1.0 - joint).clamp(0.0, 1.0);
    PairTopicDistribution { per_topic, p_nan }
}

/// Per-feature topic labels for `s = 1..samples` i.i.d. draws.
#[derive(Clone, Debug)]
pub struct TopicAssignment {
    /// `labels[s][i]` is the topic of feature `i` in draw `s`.
    pub labels: Vec<Vec<usize>>,
    pub seed: u64,
}

impl TopicAssignment {
    pub fn samples(&self) -> usize {
        self.labels.len()
    }
}

/// Draw i.i.d. categorical labels from each row of `theta`.
pub fn sample_assignments(theta: &Tensor, samples: usize, seed: u64) -> TopicAssignment {
    assert!(samples >= 1);
    let (n, k) = theta.dims2();
    let mut rng = stream(seed, &[tag::TOPIC_SAMPLING]);
    let mut labels = vec![vec![0usize; n]; samples];
    for i in 0..n {
        let row = theta.row(i);
        for draws in labels.iter_mut() {
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut chosen = k - 1;
            for (t, &p) in row.iter().enumerate() {
                acc += p;
                if u < acc {
                    chosen = t;
                    break;
                }
            }
            draws[i] = chosen;
        }
    }
    TopicAssignment { labels, seed }
}

/// Deterministic assignment: the most probable topic per feature, ties to the
/// lower id.
pub fn argmax_assignment(theta: &Tensor) -> Vec<usize> {
    let (n, k) = theta.dims2();
    (0..n)
        .map(|i| {
            let row = theta.row(i);
            let mut best = 0;
            for t in 1..k {
                if row[t] > row[best] {
                    best = t;
                }
            }
            best
        })
        .collect()
}
