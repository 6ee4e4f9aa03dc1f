//! Single-step maintenance decision process: expected utilities, maximum
//! expected utility, and the expected value of perfect information (EVPI).
//!
//! The decision process is an influence diagram with a latent health state
//! `y_t`, a successor state `y_{t+1}` driven by a transition model
//! `P(y_{t+1} | y_t, d_t)`, utilities attached to both states and to the
//! chosen action, and a binary maintenance decision. EVPI compares the
//! diagram with and without an informational edge from `y_t` to `d_t`:
//!
//! ```text
//! EVPI = MEU(observe y_t before deciding) - MEU(decide from the belief)
//! ```
//!
//! A label query (structural inspection) is mandated whenever the EVPI of a
//! data point strictly exceeds the inspection cost.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance for "sums to one" checks on beliefs and transition rows.
pub const PROB_SUM_TOL: f64 = 1e-9;

/// Row sums within this distance of 1 may be rescaled by the renormalizing
/// loader; anything further off is rejected.
pub const RENORMALIZE_TOL: f64 = 0.05;

#[derive(Debug, Error)]
pub enum DecisionError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid belief: {0}")]
    InvalidBelief(String),
    #[error("invalid transition model: {0}")]
    InvalidTransition(String),
    #[error("invalid utility model: {0}")]
    InvalidUtility(String),
    #[error("invalid decision process: {0}")]
    InvalidProcess(String),
    #[error("malformed process document: {0}")]
    Document(#[from] serde_json::Error),
}

/// Health state of the monitored structure, ranked `1..=K`.
///
/// For the built-in four-class process: 1 normal, 2 cold-temperature
/// undamaged, 3 incipient damage, 4 advanced damage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct HealthState(usize);

impl HealthState {
    pub fn new(rank: usize, class_count: usize) -> Result<Self, DecisionError> {
        if rank == 0 || rank > class_count {
            return Err(DecisionError::DimensionMismatch(format!(
                "health state rank {rank} outside 1..={class_count}"
            )));
        }
        Ok(HealthState(rank))
    }

    /// 1-based rank as reported in logs and CSV output.
    pub fn rank(self) -> usize {
        self.0
    }

    /// 0-based index into belief vectors and utility tables.
    pub fn index(self) -> usize {
        self.0 - 1
    }

    pub fn from_index(index: usize) -> Self {
        HealthState(index + 1)
    }
}

impl std::fmt::Display for HealthState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Maintenance action, indexed `0..M`. Index 0 is "do nothing" and index 1
/// is "repair" in the built-in binary process.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Action(usize);

impl Action {
    pub const DO_NOTHING: Action = Action(0);
    pub const REPAIR: Action = Action(1);

    pub fn new(index: usize, action_count: usize) -> Result<Self, DecisionError> {
        if index >= action_count {
            return Err(DecisionError::DimensionMismatch(format!(
                "action index {index} outside 0..{action_count}"
            )));
        }
        Ok(Action(index))
    }

    pub fn index(self) -> usize {
        self.0
    }

    pub fn label(self) -> String {
        match self.0 {
            0 => "do-nothing".to_string(),
            1 => "repair".to_string(),
            k => format!("action-{k}"),
        }
    }
}

impl std::fmt::Display for Action {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.label())
    }
}

/// Probability vector over the `K` health states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Belief {
    probs: Vec<f64>,
}

impl Belief {
    /// Validates non-negativity and normalization (sum within `1e-9` of 1).
    pub fn new(probs: Vec<f64>) -> Result<Self, DecisionError> {
        if probs.is_empty() {
            return Err(DecisionError::InvalidBelief("empty belief".into()));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(DecisionError::InvalidBelief(format!(
                "entries must be finite and non-negative, got {probs:?}"
            )));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > PROB_SUM_TOL {
            return Err(DecisionError::InvalidBelief(format!(
                "entries sum to {sum}, expected 1"
            )));
        }
        Ok(Belief { probs })
    }

    /// Rescales a non-negative weight vector to sum to one.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self, DecisionError> {
        if weights.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(DecisionError::InvalidBelief(format!(
                "weights must be finite and non-negative, got {weights:?}"
            )));
        }
        let sum: f64 = weights.iter().sum();
        if sum <= 0.0 {
            return Err(DecisionError::InvalidBelief("weights sum to zero".into()));
        }
        Belief::new(weights.into_iter().map(|w| w / sum).collect())
    }

    pub fn one_hot(state: HealthState, class_count: usize) -> Self {
        let mut probs = vec![0.0; class_count];
        probs[state.index()] = 1.0;
        Belief { probs }
    }

    pub fn uniform(class_count: usize) -> Self {
        Belief {
            probs: vec![1.0 / class_count as f64; class_count],
        }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn class_count(&self) -> usize {
        self.probs.len()
    }

    /// Most probable state, ties broken toward the lower rank.
    pub fn argmax(&self) -> HealthState {
        let mut best = 0;
        for (i, p) in self.probs.iter().enumerate() {
            if *p > self.probs[best] {
                best = i;
            }
        }
        HealthState::from_index(best)
    }
}

/// Transition tensor `tensor[y][y'][d] = P(y_{t+1} = y' | y_t = y, d_t = d)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TransitionModel {
    tensor: Vec<Vec<Vec<f64>>>,
}

impl TransitionModel {
    pub fn new(tensor: Vec<Vec<Vec<f64>>>) -> Result<Self, DecisionError> {
        Self::build(tensor, false)
    }

    /// As [`TransitionModel::new`], but rescales rows whose sum is within
    /// [`RENORMALIZE_TOL`] of 1 instead of rejecting them.
    pub fn new_renormalized(tensor: Vec<Vec<Vec<f64>>>) -> Result<Self, DecisionError> {
        Self::build(tensor, true)
    }

    fn build(mut tensor: Vec<Vec<Vec<f64>>>, renormalize: bool) -> Result<Self, DecisionError> {
        let k = tensor.len();
        if k == 0 {
            return Err(DecisionError::InvalidTransition("empty tensor".into()));
        }
        let m = tensor[0].first().map_or(0, |row| row.len());
        if m == 0 {
            return Err(DecisionError::InvalidTransition("no actions".into()));
        }
        for row in &tensor {
            if row.len() != k || row.iter().any(|cell| cell.len() != m) {
                return Err(DecisionError::InvalidTransition(
                    "tensor is not K x K x M".into(),
                ));
            }
        }
        for d in 0..m {
            for y in 0..k {
                let mut sum = 0.0;
                for y2 in 0..k {
                    let p = tensor[y][y2][d];
                    if !p.is_finite() || p < 0.0 {
                        return Err(DecisionError::InvalidTransition(format!(
                            "P(y'|y={},d={}) contains invalid entry {p}",
                            y + 1,
                            d
                        )));
                    }
                    sum += p;
                }
                if (sum - 1.0).abs() > PROB_SUM_TOL {
                    if renormalize && (sum - 1.0).abs() <= RENORMALIZE_TOL && sum > 0.0 {
                        for y2 in 0..k {
                            tensor[y][y2][d] /= sum;
                        }
                    } else {
                        return Err(DecisionError::InvalidTransition(format!(
                            "row for y={}, d={} sums to {sum}",
                            y + 1,
                            d
                        )));
                    }
                }
            }
        }
        Ok(TransitionModel { tensor })
    }

    pub fn class_count(&self) -> usize {
        self.tensor.len()
    }

    pub fn action_count(&self) -> usize {
        self.tensor[0][0].len()
    }

    /// `P(y_{t+1} = next | y_t = from, d_t = action)`, all 0-based indices.
    pub fn prob(&self, from: usize, next: usize, action: usize) -> f64 {
        self.tensor[from][next][action]
    }
}

/// State and action utilities. The state utility vector is used in both the
/// `U(y_t)` and `U(y_{t+1})` roles of the diagram.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UtilityModel {
    pub state_utility: Vec<f64>,
    pub action_utility: Vec<f64>,
}

impl UtilityModel {
    pub fn new(state_utility: Vec<f64>, action_utility: Vec<f64>) -> Result<Self, DecisionError> {
        if state_utility.iter().chain(&action_utility).any(|u| !u.is_finite()) {
            return Err(DecisionError::InvalidUtility(
                "utilities must be finite".into(),
            ));
        }
        if state_utility.is_empty() || action_utility.is_empty() {
            return Err(DecisionError::InvalidUtility("empty utility table".into()));
        }
        Ok(UtilityModel {
            state_utility,
            action_utility,
        })
    }
}

/// The full influence diagram: transition model, utilities, inspection cost.
#[derive(Debug, Clone)]
pub struct DecisionProcess {
    transition: TransitionModel,
    utility: UtilityModel,
    inspection_cost: f64,
}

/// Flat JSON document for a [`DecisionProcess`]:
/// `{"transition": [[[..]]], "state_utility": [..], "action_utility": [..],
///   "inspection_cost": 30.0}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecisionProcessDoc {
    pub transition: Vec<Vec<Vec<f64>>>,
    pub state_utility: Vec<f64>,
    pub action_utility: Vec<f64>,
    pub inspection_cost: f64,
}

impl DecisionProcess {
    pub fn new(
        transition: TransitionModel,
        utility: UtilityModel,
        inspection_cost: f64,
    ) -> Result<Self, DecisionError> {
        if utility.state_utility.len() != transition.class_count() {
            return Err(DecisionError::InvalidProcess(format!(
                "state utilities ({}) do not match class count ({})",
                utility.state_utility.len(),
                transition.class_count()
            )));
        }
        if utility.action_utility.len() != transition.action_count() {
            return Err(DecisionError::InvalidProcess(format!(
                "action utilities ({}) do not match action count ({})",
                utility.action_utility.len(),
                transition.action_count()
            )));
        }
        if !inspection_cost.is_finite() || inspection_cost < 0.0 {
            return Err(DecisionError::InvalidProcess(format!(
                "inspection cost must be finite and >= 0, got {inspection_cost}"
            )));
        }
        Ok(DecisionProcess {
            transition,
            utility,
            inspection_cost,
        })
    }

    pub fn from_doc(doc: DecisionProcessDoc, renormalize: bool) -> Result<Self, DecisionError> {
        let transition = if renormalize {
            TransitionModel::new_renormalized(doc.transition)?
        } else {
            TransitionModel::new(doc.transition)?
        };
        let utility = UtilityModel::new(doc.state_utility, doc.action_utility)?;
        DecisionProcess::new(transition, utility, doc.inspection_cost)
    }

    pub fn from_json(json: &str, renormalize: bool) -> Result<Self, DecisionError> {
        let doc: DecisionProcessDoc = serde_json::from_str(json)?;
        Self::from_doc(doc, renormalize)
    }

    pub fn to_doc(&self) -> DecisionProcessDoc {
        DecisionProcessDoc {
            transition: self.transition.tensor.clone(),
            state_utility: self.utility.state_utility.clone(),
            action_utility: self.utility.action_utility.clone(),
            inspection_cost: self.inspection_cost,
        }
    }

    /// Built-in four-state, two-action maintenance process with inspection
    /// cost 30. Two rows of the published tables do not sum to one as
    /// printed; they are corrected here by symmetry with their neighbours
    /// (row `y=2` of the do-nothing table ends `0.015, 0.005`; row `y=1` of
    /// the repair table starts `0.7143`).
    pub fn z24_default() -> Self {
        // tensor[y][y'][d]
        let do_nothing = [
            [0.7, 0.28, 0.015, 0.005],
            [0.43, 0.55, 0.015, 0.005],
            [0.0, 0.0, 0.8, 0.2],
            [0.0, 0.0, 0.0, 1.0],
        ];
        let repair = [
            [0.7143, 0.2857, 0.0, 0.0],
            [0.4388, 0.5612, 0.0, 0.0],
            [0.5996, 0.3904, 0.01, 0.0],
            [0.5996, 0.3904, 0.0, 0.01],
        ];
        let tensor = (0..4)
            .map(|y| {
                (0..4)
                    .map(|y2| vec![do_nothing[y][y2], repair[y][y2]])
                    .collect()
            })
            .collect();
        let transition = TransitionModel::new(tensor).expect("built-in tables are normalized");
        let utility = UtilityModel::new(vec![10.0, 10.0, -50.0, -1000.0], vec![0.0, -100.0])
            .expect("built-in utilities are finite");
        DecisionProcess::new(transition, utility, 30.0).expect("built-in process is valid")
    }

    pub fn class_count(&self) -> usize {
        self.transition.class_count()
    }

    pub fn action_count(&self) -> usize {
        self.transition.action_count()
    }

    pub fn inspection_cost(&self) -> f64 {
        self.inspection_cost
    }

    pub fn transition(&self) -> &TransitionModel {
        &self.transition
    }

    pub fn utility(&self) -> &UtilityModel {
        &self.utility
    }

    pub fn actions(&self) -> impl Iterator<Item = Action> {
        (0..self.action_count()).map(Action)
    }

    fn check_belief(&self, belief: &Belief) -> Result<(), DecisionError> {
        if belief.class_count() != self.class_count() {
            return Err(DecisionError::DimensionMismatch(format!(
                "belief has {} entries, process has {} states",
                belief.class_count(),
                self.class_count()
            )));
        }
        Ok(())
    }

    /// `U(y) + sum_{y'} P(y'|y,d) U(y')` for a known current state; the
    /// action utility is added by the callers so that the belief-weighted
    /// and state-enumerated evaluations share the same float operations.
    fn current_plus_future(&self, state: usize, action: usize) -> f64 {
        let k = self.class_count();
        let mut future = 0.0;
        for next in 0..k {
            future += self.transition.prob(state, next, action) * self.utility.state_utility[next];
        }
        self.utility.state_utility[state] + future
    }
}

/// Expected utility of taking `action` under `belief`, with the successor
/// state marginalized through the transition model:
/// `EU(d) = sum_y b(y) [U(y) + sum_{y'} P(y'|y,d) U(y')] + U(d)`.
pub fn expected_utility(
    belief: &Belief,
    action: Action,
    dp: &DecisionProcess,
) -> Result<f64, DecisionError> {
    dp.check_belief(belief)?;
    if action.index() >= dp.action_count() {
        return Err(DecisionError::DimensionMismatch(format!(
            "action {} outside 0..{}",
            action.index(),
            dp.action_count()
        )));
    }
    let mut total = 0.0;
    for (y, b) in belief.probs().iter().enumerate() {
        total += b * dp.current_plus_future(y, action.index());
    }
    Ok(total + dp.utility.action_utility[action.index()])
}

/// Maximum expected utility and its maximizing action. Ties break toward
/// the lower action index.
pub fn meu(belief: &Belief, dp: &DecisionProcess) -> Result<(Action, f64), DecisionError> {
    dp.check_belief(belief)?;
    let mut best = (Action(0), f64::NEG_INFINITY);
    for action in dp.actions() {
        let eu = expected_utility(belief, action, dp)?;
        if eu > best.1 {
            best = (action, eu);
        }
    }
    Ok(best)
}

/// Maximum expected utility when the current state is observed before the
/// decision: `sum_y b(y) max_d [U(y) + sum_{y'} P(y'|y,d) U(y') + U(d)]`.
pub fn meu_perfect_info(belief: &Belief, dp: &DecisionProcess) -> Result<f64, DecisionError> {
    dp.check_belief(belief)?;
    let mut total = 0.0;
    for (y, b) in belief.probs().iter().enumerate() {
        let mut best = f64::NEG_INFINITY;
        for d in 0..dp.action_count() {
            best = best.max(dp.current_plus_future(y, d) + dp.utility.action_utility[d]);
        }
        total += b * best;
    }
    Ok(total)
}

/// Expected value of perfect information for the current-state belief.
/// Non-negative up to rounding, zero for degenerate (one-hot) beliefs, and
/// invariant to both the `U(y_t)` term and constant shifts of the state
/// utilities.
pub fn evpi(belief: &Belief, dp: &DecisionProcess) -> Result<f64, DecisionError> {
    Ok(meu_perfect_info(belief, dp)? - meu(belief, dp)?.1)
}

/// Query criterion: inspect iff the EVPI strictly exceeds the inspection
/// cost. At equality the inspection is not worth its price.
pub fn should_query(evpi_value: f64, dp: &DecisionProcess) -> bool {
    evpi_value > dp.inspection_cost
}
