//! Game data model.
//!
//! A [`GameInstance`] is immutable once validated: relevance scores are in
//! `[0, 1]`, user weights are positive, every player has at least one action
//! and every relevance row has one entry per user.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// What a creator is paid for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    /// Expected utility of the users who pick the creator's item.
    #[default]
    Engagement,
    /// Expected number of users who pick the creator's item.
    Exposure,
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Metric::Engagement => f.write_str("engagement"),
            Metric::Exposure => f.write_str("exposure"),
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "engagement" => Ok(Metric::Engagement),
            "exposure" => Ok(Metric::Exposure),
            other => Err(Error::invalid(format!("unknown metric `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct User {
    pub id: u64,
    /// Multiplicity of the user. Fractional weights are allowed.
    pub weight: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tags: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<Vec<f64>>,
}

impl User {
    pub fn new(id: u64, weight: f64) -> Self {
        User {
            id,
            weight,
            tags: Vec::new(),
            features: None,
        }
    }
}

/// One item a creator can produce: its relevance to every user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub sigma: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tags: Vec<String>,
}

impl Action {
    pub fn new(sigma: Vec<f64>) -> Self {
        Action {
            sigma,
            tags: Vec::new(),
        }
    }

    pub fn with_tags(mut self, tags: Vec<String>) -> Self {
        self.tags = tags;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionSet {
    #[serde(default, rename = "id", skip_serializing_if = "Option::is_none")]
    pub player_id: Option<u64>,
    pub actions: Vec<Action>,
}

impl ActionSet {
    pub fn new(actions: Vec<Action>) -> Self {
        ActionSet {
            player_id: None,
            actions,
        }
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawInstance {
    beta: f64,
    k: usize,
    #[serde(default)]
    metric: Metric,
    users: Vec<User>,
    players: Vec<ActionSet>,
}

/// A finite game: users, per-player action sets, noise scale and slate size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawInstance", into = "RawInstance")]
pub struct GameInstance {
    beta: f64,
    k_slate: usize,
    metric: Metric,
    users: Vec<User>,
    players: Vec<ActionSet>,
}

impl TryFrom<RawInstance> for GameInstance {
    type Error = Error;

    fn try_from(raw: RawInstance) -> Result<Self> {
        GameInstance::new(raw.users, raw.players, raw.beta, raw.k, raw.metric)
    }
}

impl From<GameInstance> for RawInstance {
    fn from(g: GameInstance) -> Self {
        RawInstance {
            beta: g.beta,
            k: g.k_slate,
            metric: g.metric,
            users: g.users,
            players: g.players,
        }
    }
}

impl GameInstance {
    pub fn new(
        users: Vec<User>,
        players: Vec<ActionSet>,
        beta: f64,
        k_slate: usize,
        metric: Metric,
    ) -> Result<Self> {
        if !(beta.is_finite() && beta >= 0.0) {
            return Err(Error::invalid(format!("beta must be finite and >= 0, got {beta}")));
        }
        if k_slate == 0 {
            return Err(Error::invalid("slate size k must be >= 1"));
        }
        if users.is_empty() {
            return Err(Error::invalid("at least one user is required"));
        }
        if players.is_empty() {
            return Err(Error::invalid("at least one player is required"));
        }
        let m = users.len();
        let mut feature_dim = None;
        for (j, u) in users.iter().enumerate() {
            if !(u.weight.is_finite() && u.weight > 0.0) {
                return Err(Error::invalid(format!(
                    "user {j} has non-positive weight {}",
                    u.weight
                )));
            }
            if let Some(f) = &u.features {
                match feature_dim {
                    None => feature_dim = Some(f.len()),
                    Some(d) if d != f.len() => {
                        return Err(Error::invalid(format!(
                            "user {j} has {} features, expected {d}",
                            f.len()
                        )))
                    }
                    _ => {}
                }
            }
        }
        for (i, p) in players.iter().enumerate() {
            if p.actions.is_empty() {
                return Err(Error::invalid(format!("player {i} has no actions")));
            }
            for (a, act) in p.actions.iter().enumerate() {
                if act.sigma.len() != m {
                    return Err(Error::invalid(format!(
                        "player {i} action {a} has {} relevance scores for {m} users",
                        act.sigma.len()
                    )));
                }
                if let Some((j, s)) = act
                    .sigma
                    .iter()
                    .enumerate()
                    .find(|(_, s)| !(0.0..=1.0).contains(*s))
                {
                    return Err(Error::invalid(format!(
                        "player {i} action {a} user {j}: relevance {s} outside [0, 1]"
                    )));
                }
            }
        }
        Ok(GameInstance {
            beta,
            k_slate,
            metric,
            users,
            players,
        })
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        // parse the raw shape first so validation errors keep their own variant
        let raw: RawInstance = serde_json::from_str(s)?;
        raw.try_into()
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json_str(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json_string()?)?;
        Ok(())
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn k_slate(&self) -> usize {
        self.k_slate
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn users(&self) -> &[User] {
        &self.users
    }

    pub fn players(&self) -> &[ActionSet] {
        &self.players
    }

    pub fn n_players(&self) -> usize {
        self.players.len()
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn total_weight(&self) -> f64 {
        self.users.iter().map(|u| u.weight).sum()
    }

    pub fn action_counts(&self) -> Vec<usize> {
        self.players.iter().map(|p| p.actions.len()).collect()
    }

    /// Number of joint profiles, or `None` on overflow.
    pub fn num_profiles(&self) -> Option<u128> {
        self.players
            .iter()
            .try_fold(1u128, |acc, p| acc.checked_mul(p.actions.len() as u128))
    }

    /// Relevance of player `i`'s action `a` to user `j`.
    #[inline]
    pub fn sigma(&self, player: usize, action: usize, user: usize) -> f64 {
        self.players[player].actions[action].sigma[user]
    }

    pub fn with_metric(mut self, metric: Metric) -> Self {
        self.metric = metric;
        self
    }

    pub fn with_beta(mut self, beta: f64) -> Result<Self> {
        if !(beta.is_finite() && beta >= 0.0) {
            return Err(Error::invalid(format!("beta must be finite and >= 0, got {beta}")));
        }
        self.beta = beta;
        Ok(self)
    }

    pub fn with_k(mut self, k_slate: usize) -> Result<Self> {
        if k_slate == 0 {
            return Err(Error::invalid("slate size k must be >= 1"));
        }
        self.k_slate = k_slate;
        Ok(self)
    }

    pub fn check_profile(&self, profile: &StrategyProfile) -> Result<()> {
        if profile.len() != self.n_players() {
            return Err(Error::invalid(format!(
                "profile has {} entries for {} players",
                profile.len(),
                self.n_players()
            )));
        }
        for (i, (&a, p)) in profile.iter().zip(&self.players).enumerate() {
            if a >= p.actions.len() {
                return Err(Error::invalid(format!(
                    "player {i} action {a} out of range (has {})",
                    p.actions.len()
                )));
            }
        }
        Ok(())
    }
}

/// One action index per player.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StrategyProfile(pub Vec<usize>);

impl StrategyProfile {
    pub fn new(choice: Vec<usize>) -> Self {
        StrategyProfile(choice)
    }

    pub fn uniform(n: usize, action: usize) -> Self {
        StrategyProfile(vec![action; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, usize> {
        self.0.iter()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    /// `(a, s_{-i})`.
    pub fn with_action(&self, player: usize, action: usize) -> Self {
        let mut v = self.0.clone();
        v[player] = action;
        StrategyProfile(v)
    }
}

impl std::ops::Index<usize> for StrategyProfile {
    type Output = usize;

    fn index(&self, i: usize) -> &usize {
        &self.0[i]
    }
}

impl From<Vec<usize>> for StrategyProfile {
    fn from(v: Vec<usize>) -> Self {
        StrategyProfile(v)
    }
}

impl fmt::Display for StrategyProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, a) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{a}")?;
        }
        write!(f, ")")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> GameInstance {
        GameInstance::new(
            vec![User::new(0, 1.0), User::new(1, 2.5)],
            vec![
                ActionSet::new(vec![Action::new(vec![1.0, 0.0]), Action::new(vec![0.2, 0.7])]),
                ActionSet::new(vec![Action::new(vec![0.5, 0.5])]),
            ],
            0.1,
            2,
            Metric::Engagement,
        )
        .unwrap()
    }

    #[test]
    fn json_round_trip_uses_documented_field_names() {
        let g = tiny();
        let text = g.to_json_string().unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["k"], 2);
        assert_eq!(v["metric"], "engagement");
        assert_eq!(v["players"][0]["actions"][1]["sigma"][1], 0.7);
        assert_eq!(GameInstance::from_json_str(&text).unwrap(), g);
    }

    #[test]
    fn load_rejects_out_of_range_scores() {
        let text = r#"{"beta":0.1,"k":1,"metric":"exposure",
            "users":[{"id":0,"weight":1.0}],
            "players":[{"actions":[{"sigma":[1.5]}]}]}"#;
        let err = GameInstance::from_json_str(text).unwrap_err();
        assert!(err.to_string().contains("outside [0, 1]"), "{err}");
    }

    #[test]
    fn rejects_bad_weights_and_shapes() {
        let bad_weight = GameInstance::new(
            vec![User::new(0, 0.0)],
            vec![ActionSet::new(vec![Action::new(vec![0.5])])],
            0.1,
            1,
            Metric::Engagement,
        );
        assert!(bad_weight.is_err());
        let bad_len = GameInstance::new(
            vec![User::new(0, 1.0)],
            vec![ActionSet::new(vec![Action::new(vec![0.5, 0.5])])],
            0.1,
            1,
            Metric::Engagement,
        );
        assert!(bad_len.is_err());
        let no_actions = GameInstance::new(
            vec![User::new(0, 1.0)],
            vec![ActionSet::new(vec![])],
            0.1,
            1,
            Metric::Engagement,
        );
        assert!(no_actions.is_err());
    }

    #[test]
    fn profile_validation() {
        let g = tiny();
        assert!(g.check_profile(&StrategyProfile::new(vec![1, 0])).is_ok());
        assert!(g.check_profile(&StrategyProfile::new(vec![0, 1])).is_err());
        assert!(g.check_profile(&StrategyProfile::new(vec![0])).is_err());
        assert_eq!(g.num_profiles(), Some(2));
    }
}
