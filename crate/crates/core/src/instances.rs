//! Instance generators.
//!
//! - Dataset-1: one cluster holds half of the users, the other half is split
//!   at random over `n - 1` clusters; every player may target any cluster.
//! - Dataset-2: all users split at random over `n` clusters plus a "safe"
//!   action of constant relevance `delta`.
//! - The lower-bound instance whose all-`x_1` profile is a pure NE.
//! - The exposure-metric instance with an inefficient pure NE.
//! - Embedding instances: thresholded inner products between user and item
//!   vectors read from CSV.
//!
//! Random cluster sizes are uniform compositions: distinct cut points drawn
//! from `1..total` split `total` into nonempty consecutive parts.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::game::{Action, ActionSet, GameInstance, Metric, User};
use crate::rng::{rng_from_seed, GameRng};

/// Uniform random composition of `total` into `parts` positive integers.
pub fn random_composition(total: usize, parts: usize, rng: &mut GameRng) -> Result<Vec<usize>> {
    if parts == 0 || parts > total {
        return invalid(format!(
            "cannot split {total} users into {parts} nonempty clusters"
        ));
    }
    let mut cuts: Vec<usize> = sample(rng, total - 1, parts - 1)
        .into_iter()
        .map(|c| c + 1)
        .collect();
    cuts.sort_unstable();
    cuts.push(total);
    let mut prev = 0;
    Ok(cuts
        .into_iter()
        .map(|c| {
            let size = c - prev;
            prev = c;
            size
        })
        .collect())
}

fn unit_users(m: usize) -> Vec<User> {
    (0..m as u64).map(|j| User::new(j, 1.0)).collect()
}

/// Indicator action per cluster: users are laid out cluster after cluster.
fn cluster_actions(sizes: &[usize]) -> Vec<Action> {
    let m: usize = sizes.iter().sum();
    let mut start = 0;
    sizes
        .iter()
        .enumerate()
        .map(|(c, &size)| {
            let mut sigma = vec![0.0; m];
            sigma[start..start + size].iter_mut().for_each(|s| *s = 1.0);
            start += size;
            Action::new(sigma).with_tags(vec![format!("cluster{}", c + 1)])
        })
        .collect()
}

pub fn dataset1_sizes(n: usize, m: usize, seed: u64) -> Result<Vec<usize>> {
    if n < 2 {
        return invalid("dataset1 needs n >= 2");
    }
    if m % 2 != 0 {
        return invalid(format!("dataset1 needs an even number of users (got {m})"));
    }
    let mut rng = rng_from_seed(seed);
    let mut sizes = vec![m / 2];
    sizes.extend(random_composition(m / 2, n - 1, &mut rng)?);
    Ok(sizes)
}

pub fn gen_dataset1(n: usize, m: usize, beta: f64, k: usize, seed: u64) -> Result<GameInstance> {
    let sizes = dataset1_sizes(n, m, seed)?;
    let actions = cluster_actions(&sizes);
    GameInstance::new(
        unit_users(m),
        (0..n).map(|_| ActionSet::new(actions.clone())).collect(),
        beta,
        k,
        Metric::Engagement,
    )
}

pub fn gen_dataset2(
    n: usize,
    m: usize,
    delta: f64,
    beta: f64,
    k: usize,
    seed: u64,
) -> Result<GameInstance> {
    if !(0.0..=1.0).contains(&delta) {
        return invalid(format!("delta must lie in [0, 1] (got {delta})"));
    }
    let mut rng = rng_from_seed(seed);
    let sizes = random_composition(m, n, &mut rng)?;
    let mut actions = vec![Action::new(vec![delta; m]).with_tags(vec!["safe".into()])];
    actions.extend(cluster_actions(&sizes));
    GameInstance::new(
        unit_users(m),
        (0..n).map(|_| ActionSet::new(actions.clone())).collect(),
        beta,
        k,
        Metric::Engagement,
    )
}

/// Checks `0 <= beta <= 1`, `n > 2` and `1 <= K <= min(n - 1, e^{1/(5 beta)})`,
/// naming the first violated condition.
pub fn check_thm2_hypothesis(n: usize, k: usize, beta: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&beta) {
        return invalid(format!("lower-bound instance needs 0 <= beta <= 1 (got {beta})"));
    }
    if n <= 2 {
        return invalid(format!("lower-bound instance needs n > 2 (got {n})"));
    }
    if k < 1 || k > n - 1 {
        return invalid(format!("lower-bound instance needs 1 <= K <= n - 1 (got K = {k}, n = {n})"));
    }
    if beta > 0.0 && (k as f64) > (1.0 / (5.0 * beta)).exp() {
        return invalid(format!(
            "lower-bound instance needs K <= e^(1/(5 beta)) = {:.4} (got K = {k})",
            (1.0 / (5.0 * beta)).exp()
        ));
    }
    Ok(())
}

/// User type 1 carries weight `n`, types `2..=n` weight `a = 1 + beta ln K`;
/// action `x_i` is relevant to type `i` only.
pub fn gen_thm2_instance(n: usize, k: usize, beta: f64) -> Result<GameInstance> {
    check_thm2_hypothesis(n, k, beta)?;
    let a = 1.0 + beta * (k as f64).ln();
    let users: Vec<User> = (0..n as u64)
        .map(|j| User::new(j, if j == 0 { n as f64 } else { a }))
        .collect();
    let actions: Vec<Action> = (0..n)
        .map(|i| {
            let mut sigma = vec![0.0; n];
            sigma[i] = 1.0;
            Action::new(sigma).with_tags(vec![format!("x{}", i + 1)])
        })
        .collect();
    GameInstance::new(
        users,
        (0..n).map(|_| ActionSet::new(actions.clone())).collect(),
        beta,
        k,
        Metric::Engagement,
    )
}

/// Relevance `delta_0` of the exposure-instance action `s_2`, solving
/// `e^{delta/beta} + K - 1 = 2 / (1/K + 1/(b+K))`, i.e.
/// `delta_0 = beta ln(2K(b+K)/(b+2K) - (K-1))`.
pub fn prop1_delta0(k: usize, beta: f64) -> f64 {
    let kf = k as f64;
    // q = 1/b so that b = inf is handled
    let q = 1.0 / (1.0 / beta).exp_m1();
    let rhs = 2.0 * kf * (1.0 + kf * q) / (1.0 + 2.0 * kf * q);
    beta * (rhs - (kf - 1.0)).ln()
}

/// `[log(b+K) + log K] / [2 log(2K(b+K)) - 2 log(b+2K)]`.
pub fn prop1_welfare_ratio(k: usize, beta: f64) -> f64 {
    let kf = k as f64;
    let l = 1.0 / beta;
    let log_bk = l + ((kf - 1.0) * (-l).exp()).ln_1p();
    let log_b2k = l + ((2.0 * kf - 1.0) * (-l).exp()).ln_1p();
    (log_bk + kf.ln()) / (2.0 * ((2.0 * kf).ln() + log_bk) - 2.0 * log_b2k)
}

#[derive(Debug, Clone)]
pub struct Prop1Instance {
    pub instance: GameInstance,
    pub delta: f64,
    /// Set when `beta` lies outside `(0, min(0.14, 1/(5 ln K))]`, where the
    /// PoA-above-2 guarantee holds.
    pub warning: Option<String>,
}

/// Two users; player 1 chooses between `s_1` (relevant to `x_1` only) and
/// `s_2` (relevance `delta` to both), every other player has only `s_0`
/// (relevance 0). Uses the exposure metric.
pub fn gen_prop1_instance(n: usize, k: usize, beta: f64, delta: Option<f64>) -> Result<Prop1Instance> {
    if n < 2 || k < 1 {
        return invalid("exposure instance needs n >= 2 and K >= 1");
    }
    let delta = match delta {
        Some(d) => d,
        None if beta > 0.0 => prop1_delta0(k, beta),
        None => return invalid("beta = 0 needs an explicit delta in (0, 1)"),
    };
    if !(delta > 0.0 && delta < 1.0) {
        return invalid(format!("delta must lie in (0, 1) (got {delta})"));
    }
    let cap = 0.14f64.min(if k > 1 {
        1.0 / (5.0 * (k as f64).ln())
    } else {
        f64::INFINITY
    });
    let warning = (!(beta > 0.0 && beta <= cap)).then(|| {
        format!("beta = {beta} outside (0, {cap:.4}]; the PoA > 2 guarantee does not apply")
    });
    let s1 = Action::new(vec![1.0, 0.0]).with_tags(vec!["s1".into()]);
    let s2 = Action::new(vec![delta, delta]).with_tags(vec!["s2".into()]);
    let s0 = Action::new(vec![0.0, 0.0]).with_tags(vec!["s0".into()]);
    let mut players = vec![ActionSet::new(vec![s1, s2])];
    players.extend((1..n).map(|_| ActionSet::new(vec![s0.clone()])));
    let instance = GameInstance::new(unit_users(2), players, beta, k, Metric::Exposure)?;
    Ok(Prop1Instance {
        instance,
        delta,
        warning,
    })
}

/// Rows of a vector CSV, with ids.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorTable {
    pub ids: Vec<String>,
    pub vectors: Vec<Vec<f64>>,
}

impl VectorTable {
    pub fn dim(&self) -> usize {
        self.vectors.first().map_or(0, |v| v.len())
    }
}

/// Parses one vector per row. A header row is skipped when any of its fields
/// beyond the first is non-numeric. The first column is taken as an id when
/// some entry is non-numeric, or when there are at least two columns and its
/// entries are distinct integers. Without an id column, ids are row indices.
pub fn parse_vector_csv<R: std::io::Read>(reader: R) -> Result<VectorTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut rows: Vec<Vec<String>> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        rows.push(rec.iter().map(str::to_owned).collect());
    }
    let numeric = |s: &str| s.parse::<f64>().is_ok();
    if rows
        .first()
        .is_some_and(|r| r.iter().skip(1).any(|f| !numeric(f)) || (r.len() == 1 && !numeric(&r[0])))
    {
        rows.remove(0);
    }
    if rows.is_empty() {
        return invalid("vector file has no rows");
    }
    let ncols = rows[0].len();
    let first: Vec<&str> = rows.iter().map(|r| r[0].as_str()).collect();
    let has_id = first.iter().any(|f| !numeric(f))
        || (ncols >= 2 && {
            let ints: Option<Vec<i64>> = first.iter().map(|f| f.parse::<i64>().ok()).collect();
            ints.is_some_and(|v| {
                let mut s = v.clone();
                s.sort_unstable();
                s.dedup();
                s.len() == v.len()
            })
        });
    let skip = usize::from(has_id);
    let mut ids = Vec::with_capacity(rows.len());
    let mut vectors = Vec::with_capacity(rows.len());
    for (r, row) in rows.iter().enumerate() {
        if row.len() != ncols {
            return invalid(format!("row {r} has {} fields, expected {ncols}", row.len()));
        }
        let v: std::result::Result<Vec<f64>, _> = row[skip..].iter().map(|f| f.parse::<f64>()).collect();
        let v = v.map_err(|e| Error::invalid(format!("row {r}: {e}")))?;
        ids.push(if has_id { row[0].clone() } else { r.to_string() });
        vectors.push(v);
    }
    if vectors[0].is_empty() {
        return invalid("vector file has no numeric columns");
    }
    Ok(VectorTable { ids, vectors })
}

pub fn read_vector_csv(path: impl AsRef<Path>) -> Result<VectorTable> {
    parse_vector_csv(std::fs::File::open(path)?)
}

/// Tags file: `item_id,tag1|tag2|...` per row, optional header.
pub fn read_tags_csv(path: impl AsRef<Path>) -> Result<HashMap<String, Vec<String>>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut out = HashMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        if rec.len() < 2 {
            continue;
        }
        let tags: Vec<String> = rec[1]
            .split('|')
            .filter(|t| !t.is_empty())
            .map(str::to_owned)
            .collect();
        out.insert(rec[0].to_owned(), tags);
    }
    Ok(out)
}

/// Builds an embedding game: users are rows of `users` (weight 1), each
/// player samples `actions_per_player` distinct items from `items`, and
/// `sigma(s, x) = 1` iff `<s, x> >= threshold`.
#[allow(clippy::too_many_arguments)]
pub fn build_embedding_instance(
    users: &VectorTable,
    items: &VectorTable,
    tags: Option<&HashMap<String, Vec<String>>>,
    n: usize,
    actions_per_player: usize,
    threshold: f64,
    beta: f64,
    k: usize,
    seed: u64,
) -> Result<GameInstance> {
    if users.dim() != items.dim() {
        return invalid(format!(
            "user vectors have dimension {} but items have {}",
            users.dim(),
            items.dim()
        ));
    }
    if items.vectors.len() < actions_per_player {
        return invalid(format!(
            "item pool of {} is smaller than {actions_per_player} actions per player",
            items.vectors.len()
        ));
    }
    let mut rng = rng_from_seed(seed);
    let action_of = |idx: usize| {
        let s = &items.vectors[idx];
        let sigma = users
            .vectors
            .iter()
            .map(|x| {
                let dot: f64 = s.iter().zip(x).map(|(a, b)| a * b).sum();
                if dot >= threshold {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        let t = tags
            .and_then(|m| m.get(&items.ids[idx]).cloned())
            .unwrap_or_default();
        Action::new(sigma).with_tags(t)
    };
    let mut cache: HashMap<usize, Action> = HashMap::new();
    let mut players = Vec::with_capacity(n);
    for i in 0..n {
        let picks = sample(&mut rng, items.vectors.len(), actions_per_player);
        let actions = picks
            .into_iter()
            .map(|idx| cache.entry(idx).or_insert_with(|| action_of(idx)).clone())
            .collect();
        let mut set = ActionSet::new(actions);
        set.player_id = Some(i as u64);
        players.push(set);
    }
    let users: Vec<User> = users
        .ids
        .iter()
        .enumerate()
        .map(|(j, id)| User::new(id.parse().unwrap_or(j as u64), 1.0))
        .collect();
    GameInstance::new(users, players, beta, k, Metric::Engagement)
}

#[allow(clippy::too_many_arguments)]
pub fn load_embedding_instance(
    user_file: impl AsRef<Path>,
    item_file: impl AsRef<Path>,
    tags_file: Option<&Path>,
    n: usize,
    actions_per_player: usize,
    threshold: f64,
    beta: f64,
    k: usize,
    seed: u64,
) -> Result<GameInstance> {
    let users = read_vector_csv(user_file)?;
    let items = read_vector_csv(item_file)?;
    let tags = tags_file.map(read_tags_csv).transpose()?;
    build_embedding_instance(
        &users,
        &items,
        tags.as_ref(),
        n,
        actions_per_player,
        threshold,
        beta,
        k,
        seed,
    )
}

/// Random unit vectors for users and items, with the threshold set to the
/// empirical `1 - positive_rate` quantile of all user-item inner products.
#[derive(Debug, Clone)]
pub struct SyntheticEmbedding {
    pub users: VectorTable,
    pub items: VectorTable,
    pub threshold: f64,
}

fn unit_vectors(count: usize, dim: usize, prefix: &str, rng: &mut GameRng) -> VectorTable {
    let vectors: Vec<Vec<f64>> = (0..count)
        .map(|_| {
            let v: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
            v.into_iter().map(|x| x / norm).collect()
        })
        .collect();
    VectorTable {
        ids: (0..count).map(|i| format!("{prefix}{i}")).collect(),
        vectors,
    }
}

pub fn synthetic_embedding(
    n_users: usize,
    n_items: usize,
    dim: usize,
    positive_rate: f64,
    seed: u64,
) -> Result<SyntheticEmbedding> {
    if n_users == 0 || n_items == 0 || dim == 0 || !(0.0 < positive_rate && positive_rate < 1.0) {
        return invalid("synthetic embedding needs positive sizes and a rate in (0, 1)");
    }
    let mut rng = rng_from_seed(seed);
    let users = unit_vectors(n_users, dim, "u", &mut rng);
    let items = unit_vectors(n_items, dim, "i", &mut rng);
    let mut dots: Vec<f64> = items
        .vectors
        .iter()
        .flat_map(|s| {
            users
                .vectors
                .iter()
                .map(move |x| s.iter().zip(x).map(|(a, b)| a * b).sum::<f64>())
        })
        .collect();
    dots.sort_by(f64::total_cmp);
    let pos = ((1.0 - positive_rate) * dots.len() as f64).floor() as usize;
    let threshold = dots[pos.min(dots.len() - 1)];
    Ok(SyntheticEmbedding {
        users,
        items,
        threshold,
    })
}

/// Writes vectors as CSV with a header `id,d0,d1,...`.
pub fn write_vector_csv(path: impl AsRef<Path>, table: &VectorTable) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["id".to_string()];
    header.extend((0..table.dim()).map(|d| format!("d{d}")));
    w.write_record(&header)?;
    for (id, v) in table.ids.iter().zip(&table.vectors) {
        let mut rec = vec![id.clone()];
        rec.extend(v.iter().map(|x| format!("{x:.17e}")));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Dataset1,
    Dataset2,
    Thm2LowerBound,
    Prop1Exposure,
    Embedding,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingSource {
    pub users: PathBuf,
    pub items: PathBuf,
    #[serde(default)]
    pub tags: Option<PathBuf>,
    #[serde(default = "default_actions_per_player")]
    pub actions_per_player: usize,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
}

fn default_actions_per_player() -> usize {
    500
}

fn default_threshold() -> f64 {
    4.0
}

fn default_m() -> usize {
    100
}

/// Declarative description of one generated instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceSpec {
    pub family: Family,
    pub n: usize,
    #[serde(default = "default_m")]
    pub m: usize,
    pub beta: f64,
    #[serde(rename = "K", alias = "k")]
    pub k: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metric: Option<Metric>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<EmbeddingSource>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct GeneratedInstance {
    pub instance: GameInstance,
    pub warnings: Vec<String>,
}

impl InstanceSpec {
    pub fn build(&self) -> Result<GeneratedInstance> {
        let mut warnings = Vec::new();
        let instance = match self.family {
            Family::Dataset1 => gen_dataset1(self.n, self.m, self.beta, self.k, self.seed)?,
            Family::Dataset2 => {
                let delta = self
                    .delta
                    .ok_or_else(|| Error::invalid("dataset2 needs delta"))?;
                gen_dataset2(self.n, self.m, delta, self.beta, self.k, self.seed)?
            }
            Family::Thm2LowerBound => gen_thm2_instance(self.n, self.k, self.beta)?,
            Family::Prop1Exposure => {
                let p = gen_prop1_instance(self.n, self.k, self.beta, self.delta)?;
                warnings.extend(p.warning);
                p.instance
            }
            Family::Embedding => {
                let src = self
                    .embedding
                    .as_ref()
                    .ok_or_else(|| Error::invalid("embedding family needs an embedding source"))?;
                load_embedding_instance(
                    &src.users,
                    &src.items,
                    src.tags.as_deref(),
                    self.n,
                    src.actions_per_player,
                    src.threshold,
                    self.beta,
                    self.k,
                    self.seed,
                )?
            }
        };
        let instance = match self.metric {
            Some(m) => instance.with_metric(m),
            None => instance,
        };
        Ok(GeneratedInstance { instance, warnings })
    }
}
