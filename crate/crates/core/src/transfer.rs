//! Reusing a pretrained policy on a new walker: weight transfer, few-shot
//! fine-tuning, and scratch-versus-pretrained comparisons.

use thiserror::Error;

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::eval::{evaluate, EvalSummary, MeanStd};
use crate::robot_model::{ModelError, RobotModel};
use crate::scalar::Scalar;
use crate::trainer::{Adam, EpochReport, MetricsRow, ReturnTracker, TrainState, Trainer, TrainerConfig};
use crate::unified_space::build_mapping;

/// Fine-tuning starts from a third of the pretraining rate.
pub const FINETUNE_LR: f64 = 1e-4;
pub const DEFAULT_INIT_STD: f64 = 0.2;

#[derive(Debug, Error)]
pub enum TransferError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{0}")]
    Training(String),
}

/// Copies the networks and descriptor statistics, gives the new walker a
/// single fresh noise vector at `sigma_init` and freezes the observation
/// normalizer.
pub fn adapt_checkpoint<T: Scalar>(
    ckpt: &Checkpoint<T>,
    new_model: &RobotModel,
    sigma_init: f64,
) -> Result<TrainState<T>, TransferError> {
    build_mapping(new_model)?;
    if !(sigma_init > 0.0) {
        return Err(TransferError::Training(format!("initial std must be positive, got {sigma_init}")));
    }
    let mut policy = ckpt.state.policy.clone();
    policy.log_std.clear();
    policy.push_embodiment(sigma_init);
    policy.obs_norm.frozen = true;
    let adam = Adam::for_policy(&mut policy);
    Ok(TrainState {
        policy,
        adam,
        epoch: 0,
        curriculum_scale: 0.5,
        lr: FINETUNE_LR,
        returns: ReturnTracker::new(1, ckpt.state.returns.decay),
        weights: vec![1.0],
        desc_stats: ckpt.state.desc_stats.clone(),
    })
}

/// Trainer settings for a single-walker run of `epochs` epochs.
pub fn finetune_config(base: &TrainerConfig, epochs: usize, lr: f64) -> TrainerConfig {
    TrainerConfig {
        epochs: epochs.max(1),
        learning_rate: lr,
        per_embodiment_sigma: true,
        ..base.clone()
    }
}

/// Runs `epochs` updates on `robot`. Zero epochs returns the state untouched.
pub fn finetune<T: Scalar>(
    run: &RunConfig,
    state: TrainState<T>,
    robot: RobotModel,
    epochs: usize,
    seed: u64,
    mut on_epoch: impl FnMut(&EpochReport),
) -> Result<(TrainState<T>, Vec<MetricsRow>), TransferError> {
    if epochs == 0 {
        return Ok((state, Vec::new()));
    }
    let cfg = finetune_config(&run.trainer, epochs, state.lr);
    let mut t = Trainer::with_state(&cfg, &run.env, &run.dr, &run.reward, vec![robot], state, seed)
        .map_err(TransferError::Training)?;
    let mut rows = Vec::new();
    for _ in 0..epochs {
        let rep = t.epoch();
        if rep.update.non_finite {
            return Err(TransferError::Training(format!("non-finite loss at epoch {}", t.state.epoch)));
        }
        on_epoch(&rep);
        rows.extend(rep.rows);
    }
    Ok((t.state, rows))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareConfig {
    /// Epoch counts at which the scratch arm is evaluated.
    pub scratch_budgets: Vec<usize>,
    /// Epoch counts at which the pretrained arm is evaluated.
    pub pretrained_budgets: Vec<usize>,
    pub seeds: Vec<u64>,
    pub init_std: f64,
}

impl Default for CompareConfig {
    fn default() -> Self {
        CompareConfig {
            scratch_budgets: vec![0, 100, 500, 1000],
            pretrained_budgets: vec![0, 100, 500, 1000],
            seeds: vec![1, 2, 3],
            init_std: DEFAULT_INIT_STD,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub robot: String,
    pub regime: String,
    pub epochs: usize,
    pub return_mean: f64,
    pub return_std: f64,
    pub evx: f64,
    pub evy: f64,
    pub epsi: f64,
    /// Per-seed evaluation summaries behind this row.
    pub per_seed: Vec<EvalSummary>,
}

impl CompareRow {
    pub const HEADER: &'static str = "robot,regime,epochs,return_mean,return_std,Evx,Evy,Epsi";

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.robot, self.regime, self.epochs, self.return_mean, self.return_std, self.evx, self.evy, self.epsi
        )
    }
}

fn finite_mean(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.filter(|x| x.is_finite()).collect();
    MeanStd::of(&v).mean
}

fn aggregate(robot: &str, regime: &str, epochs: usize, per_seed: Vec<EvalSummary>) -> CompareRow {
    let rets: Vec<f64> = per_seed.iter().map(|s| s.ret.mean).collect();
    let r = MeanStd::of(&rets);
    CompareRow {
        robot: robot.to_string(),
        regime: regime.to_string(),
        epochs,
        return_mean: r.mean,
        return_std: r.std,
        evx: finite_mean(per_seed.iter().map(|s| s.evx.mean)),
        evy: finite_mean(per_seed.iter().map(|s| s.evy.mean)),
        epsi: finite_mean(per_seed.iter().map(|s| s.epsi.mean)),
        per_seed,
    }
}

/// Trains one arm to its largest budget, evaluating at every budget.
fn run_arm<T: Scalar>(
    run: &RunConfig,
    robot: &RobotModel,
    state: TrainState<T>,
    budgets: &[usize],
    seed: u64,
) -> Result<Vec<EvalSummary>, TransferError> {
    let mut budgets = budgets.to_vec();
    budgets.sort_unstable();
    budgets.dedup();
    let last = budgets.last().copied().unwrap_or(0);
    let cfg = finetune_config(&run.trainer, last, state.lr);
    let mut t = Trainer::with_state(&cfg, &run.env, &run.dr, &run.reward, vec![robot.clone()], state, seed)
        .map_err(TransferError::Training)?;
    let mut out = Vec::new();
    let mut done = 0;
    for b in budgets {
        while done < b {
            let rep = t.epoch();
            if rep.update.non_finite {
                return Err(TransferError::Training(format!("non-finite loss at epoch {done}")));
            }
            done += 1;
        }
        let (s, _) = evaluate(&t.state.policy, &t.state.desc_stats, robot, &run.env, &run.reward, &run.eval, seed)
            .map_err(TransferError::Training)?;
        log::info!("{} epochs {b}: return {:.3} len {:.3}", robot.name, s.ret.mean, s.ep_len_norm.mean);
        out.push(s);
    }
    Ok(out)
}

/// Scratch (`S`) and pretrained (`P`) arms on `robot` with the same seeds.
/// Rows come back ordered by regime then budget.
pub fn compare_regimes<T: Scalar>(
    run: &RunConfig,
    pretrained: &Checkpoint<T>,
    robot: &RobotModel,
    cc: &CompareConfig,
) -> Result<Vec<CompareRow>, TransferError> {
    let mut rows = Vec::new();
    for (regime, budgets) in [("S", &cc.scratch_budgets), ("P", &cc.pretrained_budgets)] {
        let mut sorted = budgets.clone();
        sorted.sort_unstable();
        sorted.dedup();
        let mut per_budget: Vec<Vec<EvalSummary>> = vec![Vec::new(); sorted.len()];
        for &seed in &cc.seeds {
            let state = if regime == "S" {
                let stats = crate::trainer::fit_descriptor_stats(
                    std::slice::from_ref(robot),
                    &run.dr,
                    run.trainer.descriptor_samples,
                    seed,
                );
                TrainState::fresh(&run.trainer, 1, stats, seed)
            } else {
                adapt_checkpoint(pretrained, robot, cc.init_std)?
            };
            for (k, s) in run_arm(run, robot, state, &sorted, seed)?.into_iter().enumerate() {
                per_budget[k].push(s);
            }
        }
        for (b, sums) in sorted.into_iter().zip(per_budget) {
            rows.push(aggregate(&robot.name, regime, b, sums));
        }
    }
    Ok(rows)
}

/// First pretrained budget whose mean return reaches `threshold`.
pub fn epochs_to_threshold(rows: &[CompareRow], regime: &str, threshold: f64) -> Option<usize> {
    rows.iter()
        .filter(|r| r.regime == regime && r.return_mean >= threshold)
        .map(|r| r.epochs)
        .min()
}
