//! Risk-based active learning campaign: stream observations through a
//! classifier, compute the expected value of perfect information for every
//! belief, inspect (query the true label) whenever it exceeds the
//! inspection cost, retrain on the grown labelled set, and decide.
//!
//! Queried steps decide from the revealed ground truth (the inspection
//! happens before the maintenance decision); all other steps decide from
//! the classifier belief. When the classifier cannot train at all (a
//! single observed class, or a hard training failure) the harness falls
//! back to uniform beliefs, whose EVPI exceeds the default inspection
//! cost, so the system keeps inspecting until it can learn.

use crate::data::MonitoringStream;
use crate::decision::{
    evpi, meu, should_query, Action, Belief, DecisionError, DecisionProcess, HealthState,
};
use crate::gmm::{gmm_fit, GmmModel, GmmPrior};
use crate::kernel::{FeatureMatrix, KernelConfig, KernelError};
use crate::mrvm::{MrvmModel, MrvmVariant, TrainConfig, Trainer};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CampaignError {
    #[error("invalid campaign config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Decision(#[from] DecisionError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error("initial classifier setup failed: {0}")]
    Setup(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassifierKind {
    Gmm,
    Mrvm1,
    Mrvm2,
}

impl ClassifierKind {
    pub const ALL: [ClassifierKind; 3] =
        [ClassifierKind::Gmm, ClassifierKind::Mrvm1, ClassifierKind::Mrvm2];

    pub fn name(self) -> &'static str {
        match self {
            ClassifierKind::Gmm => "gmm",
            ClassifierKind::Mrvm1 => "mrvm1",
            ClassifierKind::Mrvm2 => "mrvm2",
        }
    }
}

impl std::str::FromStr for ClassifierKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gmm" => Ok(ClassifierKind::Gmm),
            "mrvm1" => Ok(ClassifierKind::Mrvm1),
            "mrvm2" => Ok(ClassifierKind::Mrvm2),
            other => Err(format!("unknown classifier {other:?}")),
        }
    }
}

/// How the initial labelled set is drawn from the stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitialSelection {
    /// The first `initial_labelled_count` observations.
    Prefix,
    /// A uniform random subset, seeded; the run-to-run variation source
    /// besides the stream draw itself.
    Random,
}

#[derive(Debug, Clone)]
pub struct CampaignConfig {
    pub classifier_kind: ClassifierKind,
    pub initial_labelled_count: usize,
    pub initial_selection: InitialSelection,
    pub decision_process: DecisionProcess,
    pub train_config: TrainConfig,
    pub kernel: KernelConfig,
    /// Evaluate whole-stream decision accuracy and macro f1 after the
    /// initial fit and after every retrain.
    pub evaluate_milestones: bool,
    pub seed: u64,
}

impl CampaignConfig {
    pub fn new(classifier_kind: ClassifierKind, decision_process: DecisionProcess) -> Self {
        let variant = match classifier_kind {
            ClassifierKind::Mrvm1 => MrvmVariant::Constructive,
            _ => MrvmVariant::Pruning,
        };
        CampaignConfig {
            classifier_kind,
            initial_labelled_count: 10,
            initial_selection: InitialSelection::Random,
            decision_process,
            train_config: TrainConfig::for_variant(variant),
            kernel: KernelConfig::default(),
            evaluate_milestones: true,
            seed: 0,
        }
    }
}

/// One logged step of a campaign. The belief is always the classifier's
/// (uniform under fallback); queried steps still decide from the revealed
/// truth.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    pub belief: Belief,
    pub evpi: f64,
    pub queried: bool,
    pub action: Action,
    pub oracle_action: Action,
    pub predicted_label: HealthState,
    pub true_label: HealthState,
}

/// Whole-stream evaluation snapshot taken after the initial fit and after
/// each retrain, indexed by the cumulative query count (initial labels
/// count as queries).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Milestone {
    pub query_count: usize,
    pub decision_accuracy: f64,
    pub macro_f1: f64,
}

/// Final classifier state carried in the run record for checkpointing.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelSnapshot {
    Uniform,
    Gmm { model: Box<GmmModel> },
    Mrvm { model: Box<MrvmModel> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub classifier_kind: ClassifierKind,
    pub seed: u64,
    pub stream_length: usize,
    pub initial_indices: Vec<usize>,
    pub steps: Vec<StepRecord>,
    pub milestones: Vec<Milestone>,
    /// Post-initialization queries: the number of true `queried` flags.
    pub query_count: usize,
    /// Steps where retraining failed and the uniform fallback was used.
    pub training_failures: Vec<(usize, String)>,
    pub final_model: ModelSnapshot,
}

impl RunRecord {
    pub fn initial_labelled_count(&self) -> usize {
        self.initial_indices.len()
    }

    /// Total label acquisitions including the initial seed labels.
    pub fn total_queries(&self) -> usize {
        self.initial_labelled_count() + self.query_count
    }

    /// Per-observation query indicator over the whole stream.
    pub fn query_indicator(&self) -> Vec<bool> {
        let mut indicator = vec![false; self.stream_length];
        for &i in &self.initial_indices {
            indicator[i] = true;
        }
        for step in &self.steps {
            if step.queried {
                indicator[step.t] = true;
            }
        }
        indicator
    }

    /// Record CSV: header plus one row per step,
    /// `t,belief_1..belief_K,evpi,queried,action,oracle_action,pred_label,true_label`.
    pub fn to_csv(&self) -> String {
        let class_count = self
            .steps
            .first()
            .map_or(0, |s| s.belief.class_count());
        let mut out = String::from("t");
        for k in 1..=class_count {
            out.push_str(&format!(",belief_{k}"));
        }
        out.push_str(",evpi,queried,action,oracle_action,pred_label,true_label\n");
        for step in &self.steps {
            out.push_str(&format!("{}", step.t));
            for p in step.belief.probs() {
                out.push_str(&format!(",{p}"));
            }
            out.push_str(&format!(
                ",{},{},{},{},{},{}\n",
                step.evpi,
                step.queried as u8,
                step.action.index(),
                step.oracle_action.index(),
                step.predicted_label.rank(),
                step.true_label.rank()
            ));
        }
        out
    }
}

/// MEU-optimal action for a belief.
pub fn decide(belief: &Belief, dp: &DecisionProcess) -> Result<Action, DecisionError> {
    Ok(meu(belief, dp)?.0)
}

enum Fitted {
    Uniform,
    Gmm(Box<GmmModel>),
    Mrvm(Box<MrvmModel>),
}

impl Fitted {
    fn predict(&self, x: &[f64], class_count: usize) -> Result<Belief, CampaignError> {
        match self {
            Fitted::Uniform => Ok(Belief::uniform(class_count)),
            Fitted::Gmm(model) => model
                .predict_proba(x)
                .map_err(|e| CampaignError::Setup(e.to_string())),
            Fitted::Mrvm(model) => model
                .predict_proba(x)
                .map_err(|e| CampaignError::Setup(e.to_string())),
        }
    }

    fn snapshot(&self) -> ModelSnapshot {
        match self {
            Fitted::Uniform => ModelSnapshot::Uniform,
            Fitted::Gmm(model) => ModelSnapshot::Gmm {
                model: model.clone(),
            },
            Fitted::Mrvm(model) => ModelSnapshot::Mrvm {
                model: model.clone(),
            },
        }
    }
}

struct Harness<'a> {
    stream: &'a MonitoringStream,
    class_count: usize,
    kind: ClassifierKind,
    trainer: Option<Trainer>,
    prior: Option<GmmPrior>,
    labelled: Vec<(usize, HealthState)>,
}

impl<'a> Harness<'a> {
    fn labelled_features(&self) -> FeatureMatrix {
        let rows: Vec<Vec<f64>> = self
            .labelled
            .iter()
            .map(|(i, _)| self.stream.observation(*i))
            .collect();
        FeatureMatrix::from_rows(&rows).expect("labelled rows share the stream dimension")
    }

    fn labels(&self) -> Vec<HealthState> {
        self.labelled.iter().map(|(_, l)| *l).collect()
    }

    fn fit(&self) -> Result<Fitted, String> {
        let features = self.labelled_features();
        let labels = self.labels();
        match self.kind {
            ClassifierKind::Gmm => {
                let prior = self.prior.as_ref().expect("gmm harness carries a prior");
                gmm_fit(&features, &labels, prior)
                    .map(|model| Fitted::Gmm(Box::new(model)))
                    .map_err(|e| e.to_string())
            }
            ClassifierKind::Mrvm1 | ClassifierKind::Mrvm2 => {
                let trainer = self.trainer.as_ref().expect("mrvm harness carries a trainer");
                trainer
                    .train(&features, &labels, self.class_count)
                    .map(|model| Fitted::Mrvm(Box::new(model)))
                    .map_err(|e| e.to_string())
            }
        }
    }
}

/// Runs one campaign over the stream. Deterministic for a fixed stream,
/// config, and seed.
pub fn run_campaign(
    stream: &MonitoringStream,
    config: &CampaignConfig,
) -> Result<RunRecord, CampaignError> {
    let dp = &config.decision_process;
    let n = stream.len();
    if config.initial_labelled_count == 0 {
        return Err(CampaignError::InvalidConfig(
            "initial_labelled_count must be >= 1".into(),
        ));
    }
    if config.initial_labelled_count >= n {
        return Err(CampaignError::InvalidConfig(format!(
            "initial_labelled_count {} must be below the stream length {n}",
            config.initial_labelled_count
        )));
    }
    let class_count = dp.class_count();
    if stream.labels().iter().any(|l| l.rank() > class_count) {
        return Err(CampaignError::InvalidConfig(format!(
            "stream labels exceed the process class count {class_count}"
        )));
    }
    config
        .train_config
        .validate()
        .map_err(|e| CampaignError::InvalidConfig(e.to_string()))?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let initial_indices: Vec<usize> = match config.initial_selection {
        InitialSelection::Prefix => (0..config.initial_labelled_count).collect(),
        InitialSelection::Random => {
            let mut picked = sample(&mut rng, n, config.initial_labelled_count).into_vec();
            picked.sort_unstable();
            picked
        }
    };

    let labelled: Vec<(usize, HealthState)> = initial_indices
        .iter()
        .map(|&i| (i, stream.true_label(i)))
        .collect();

    let initial_features = FeatureMatrix::from_rows(
        &initial_indices
            .iter()
            .map(|&i| stream.observation(i))
            .collect::<Vec<_>>(),
    )?;

    let mut train_config = config.train_config.clone();
    train_config.variant = match config.classifier_kind {
        ClassifierKind::Mrvm1 => MrvmVariant::Constructive,
        _ => MrvmVariant::Pruning,
    };
    train_config.seed = config.seed;

    let (trainer, prior) = match config.classifier_kind {
        ClassifierKind::Gmm => (
            None,
            Some(GmmPrior::from_reference(&initial_features, class_count)),
        ),
        _ => (
            Some(
                Trainer::from_data(&initial_features, &config.kernel, train_config)
                    .map_err(|e| CampaignError::Setup(e.to_string()))?,
            ),
            None,
        ),
    };

    let mut harness = Harness {
        stream,
        class_count,
        kind: config.classifier_kind,
        trainer,
        prior,
        labelled,
    };

    let oracle_actions: Vec<Action> = (0..class_count)
        .map(|k| decide(&Belief::one_hot(HealthState::from_index(k), class_count), dp))
        .collect::<Result<_, _>>()?;

    let mut training_failures: Vec<(usize, String)> = Vec::new();
    let mut model = match harness.fit() {
        Ok(model) => model,
        Err(message) => {
            training_failures.push((0, message));
            Fitted::Uniform
        }
    };

    let mut milestones = Vec::new();
    let mut total_queries = initial_indices.len();
    if config.evaluate_milestones {
        milestones.push(evaluate_milestone(
            stream,
            &model,
            dp,
            &oracle_actions,
            total_queries,
            class_count,
        )?);
    }

    let initial_set: HashSet<usize> = initial_indices.iter().copied().collect();
    let mut steps = Vec::with_capacity(n - initial_indices.len());
    let mut query_count = 0usize;

    for t in 0..n {
        if initial_set.contains(&t) {
            continue;
        }
        let x = stream.observation(t);
        let belief = model.predict(&x, class_count)?;
        let evpi_value = evpi(&belief, dp)?;
        let queried = should_query(evpi_value, dp);
        let truth = stream.true_label(t);

        let decision_belief = if queried {
            query_count += 1;
            total_queries += 1;
            harness.labelled.push((t, truth));
            match harness.fit() {
                Ok(new_model) => model = new_model,
                Err(message) => {
                    training_failures.push((t, message));
                    model = Fitted::Uniform;
                }
            }
            if config.evaluate_milestones {
                milestones.push(evaluate_milestone(
                    stream,
                    &model,
                    dp,
                    &oracle_actions,
                    total_queries,
                    class_count,
                )?);
            }
            Belief::one_hot(truth, class_count)
        } else {
            belief.clone()
        };

        let action = decide(&decision_belief, dp)?;
        let oracle_action = oracle_actions[truth.index()];
        steps.push(StepRecord {
            t,
            predicted_label: belief.argmax(),
            belief,
            evpi: evpi_value,
            queried,
            action,
            oracle_action,
            true_label: truth,
        });
    }

    Ok(RunRecord {
        classifier_kind: config.classifier_kind,
        seed: config.seed,
        stream_length: n,
        initial_indices,
        steps,
        milestones,
        query_count,
        training_failures,
        final_model: model.snapshot(),
    })
}

fn evaluate_milestone(
    stream: &MonitoringStream,
    model: &Fitted,
    dp: &DecisionProcess,
    oracle_actions: &[Action],
    query_count: usize,
    class_count: usize,
) -> Result<Milestone, CampaignError> {
    let n = stream.len();
    let mut agree = 0usize;
    let mut predicted = Vec::with_capacity(n);
    for t in 0..n {
        let belief = model.predict(&stream.observation(t), class_count)?;
        let action = decide(&belief, dp)?;
        if action == oracle_actions[stream.true_label(t).index()] {
            agree += 1;
        }
        predicted.push(belief.argmax());
    }
    let decision_accuracy = agree as f64 / n as f64;
    let macro_f1 = crate::metrics::macro_f1(&predicted, stream.labels(), class_count);
    Ok(Milestone {
        query_count,
        decision_accuracy,
        macro_f1,
    })
}
