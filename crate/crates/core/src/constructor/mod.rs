//! Node-by-node network construction.
//!
//! Every step draws candidate nodes, scores them against the current
//! residual, installs one, and updates the output weights either greedily
//! (projection of the residual on the new column) or globally (least squares
//! over all columns).
//!
//! For the global variant the residual is tracked by projecting onto an
//! incrementally orthogonalized basis of the hidden columns, which equals the
//! least-squares residual while costing `O(N L)` per step. The final output
//! weights come from [`recompute_global`].

mod config;
mod pool;
mod trace;

use std::time::{Duration, Instant};

pub use config::{Fallback, PoolRule, ScopeSchedule, TrainConfig, Variant};
pub(crate) use pool::splitmix;
pub use pool::{
    candidate_rng, draw_candidate, evaluate_candidate, gamma, local_beta, select_node,
    update_residual_local, CandidateEvaluation, CandidateScores, PoolContext, Residual, Selection,
    MIN_NODE_POWER,
};
pub use trace::{StepDiagnostics, TraceRecord, TrainStatus, TrainTrace, TRACE_HEADER};

use crate::data::{Dataset, NormStats};
use crate::error::{Error, Result};
use crate::linalg::{dot, mean_dot, solve_least_squares, Matrix, RANK_TOLERANCE};
use crate::model::{ActivationKind, GeoNet, HiddenNode, ModelMeta};

/// Least-squares output weights for hidden matrix `h` and targets `f`,
/// together with the residual `f - h beta`.
pub fn recompute_global(h: &Matrix, f: &Matrix) -> Result<(Matrix, Matrix)> {
    let beta = solve_least_squares(h, f)?;
    let residual = f.sub(&h.matmul(&beta)?)?;
    Ok((beta, residual))
}

/// Incremental Gram-Schmidt basis (two passes) of the accepted hidden columns.
#[derive(Debug, Clone, Default)]
struct OrthoBasis {
    q: Vec<Vec<f64>>,
}

struct BasisStep {
    /// Coefficients of the new column against the existing basis.
    coeffs: Vec<f64>,
    /// Norm of the orthogonal remainder; the new basis vector is remainder / norm.
    norm: f64,
}

impl OrthoBasis {
    /// Adds `g`; returns `None` when it lies in the current span.
    fn push(&mut self, g: &[f64]) -> Option<BasisStep> {
        let mut v = g.to_vec();
        let mut coeffs = vec![0.0; self.q.len()];
        for _ in 0..2 {
            let c: Vec<f64> = self.q.iter().map(|q| dot(q, &v)).collect();
            for (qi, ci) in self.q.iter().zip(&c) {
                for (vj, qj) in v.iter_mut().zip(qi) {
                    *vj -= ci * qj;
                }
            }
            for (a, b) in coeffs.iter_mut().zip(&c) {
                *a += b;
            }
        }
        let norm = dot(&v, &v).sqrt();
        let g_norm = dot(g, g).sqrt();
        if !(norm > RANK_TOLERANCE * g_norm) {
            return None;
        }
        for x in v.iter_mut() {
            *x /= norm;
        }
        self.q.push(v);
        Some(BasisStep { coeffs, norm })
    }

    fn last(&self) -> &[f64] {
        self.q.last().expect("basis is non-empty after a push")
    }
}

/// Growing network during training, on normalized data.
#[derive(Debug, Clone)]
pub struct TrainState {
    variant: Variant,
    activation: ActivationKind,
    x: Matrix,
    targets: Matrix,
    residual: Residual,
    nodes: Vec<HiddenNode>,
    columns: Vec<Vec<f64>>,
    greedy_beta: Vec<Vec<f64>>,
    basis: OrthoBasis,
}

/// What one installed column did to the fit; used to mirror updates onto
/// held-out rows.
enum Update {
    Greedy(Vec<f64>),
    Global(Option<(BasisStep, Vec<f64>)>),
}

impl TrainState {
    pub fn new(variant: Variant, x: Matrix, targets: Matrix) -> Result<Self> {
        if x.rows() != targets.rows() {
            return Err(Error::dim("feature and target row counts differ"));
        }
        if x.rows() == 0 || targets.cols() == 0 {
            return Err(Error::Empty("training data"));
        }
        x.ensure_finite("training features")?;
        targets.ensure_finite("training targets")?;
        let residual = Residual::from_matrix(&targets)?;
        Ok(TrainState {
            variant,
            activation: ActivationKind::Sigmoid,
            x,
            targets,
            residual,
            nodes: Vec::new(),
            columns: Vec::new(),
            greedy_beta: Vec::new(),
            basis: OrthoBasis::default(),
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn residual(&self) -> &Residual {
        &self.residual
    }

    pub fn nodes(&self) -> &[HiddenNode] {
        &self.nodes
    }

    pub fn context(&self) -> PoolContext<'_> {
        PoolContext {
            x: &self.x,
            activation: self.activation,
        }
    }

    /// Installs `node` (whose training output is `g`) and updates the residual.
    pub fn install(&mut self, node: HiddenNode, g: Vec<f64>) -> Result<()> {
        self.install_inner(node, g).map(|_| ())
    }

    fn install_inner(&mut self, node: HiddenNode, g: Vec<f64>) -> Result<Update> {
        if g.len() != self.x.rows() || node.dim() != self.x.cols() {
            return Err(Error::dim(
                "installed node does not match the training data",
            ));
        }
        let update = if self.variant.uses_global_weights() {
            let step = self.basis.push(&g).map(|step| {
                let q = self.basis.last();
                let coef: Vec<f64> = self.residual.columns().iter().map(|e| dot(q, e)).collect();
                for (e, c) in self.residual.columns_mut().iter_mut().zip(&coef) {
                    for (ei, qi) in e.iter_mut().zip(q) {
                        *ei -= c * qi;
                    }
                }
                self.residual.refresh_norms();
                (step, coef)
            });
            Update::Global(step)
        } else {
            let beta = if mean_dot(&g, &g) > MIN_NODE_POWER {
                local_beta(&self.residual, &g)?
            } else {
                vec![0.0; self.residual.n_targets()]
            };
            self.residual.subtract(&g, &beta);
            self.greedy_beta.push(beta.clone());
            Update::Greedy(beta)
        };
        self.nodes.push(node);
        self.columns.push(g);
        Ok(update)
    }

    pub fn hidden_matrix(&self) -> Result<Matrix> {
        Matrix::from_columns(self.x.rows(), &self.columns)
    }

    /// Output weights for the installed nodes (`L x m`).
    pub fn output_weights(&self) -> Result<Matrix> {
        let m = self.targets.cols();
        if self.nodes.is_empty() {
            return Ok(Matrix::zeros(0, m));
        }
        if self.variant.uses_global_weights() {
            Ok(recompute_global(&self.hidden_matrix()?, &self.targets)?.0)
        } else {
            Matrix::from_rows(&self.greedy_beta)
        }
    }
}

/// Tracks predictions on held-out rows as nodes are installed.
struct HeldOut {
    x: Matrix,
    y: Vec<Vec<f64>>,
    pred: Vec<Vec<f64>>,
    /// Held-out image of each basis vector (global variant only).
    basis: Vec<Vec<f64>>,
}

impl HeldOut {
    fn new(x: Matrix, y: &Matrix) -> Self {
        let pred = vec![vec![0.0; x.rows()]; y.cols()];
        HeldOut {
            y: y.columns(),
            x,
            pred,
            basis: Vec::new(),
        }
    }

    fn apply(&mut self, node: &HiddenNode, activation: ActivationKind, update: &Update) {
        let g = node.output_unchecked(activation, &self.x);
        match update {
            Update::Greedy(beta) => {
                for (p, b) in self.pred.iter_mut().zip(beta) {
                    for (pi, gi) in p.iter_mut().zip(&g) {
                        *pi += b * gi;
                    }
                }
            }
            Update::Global(None) => {}
            Update::Global(Some((step, coef))) => {
                let mut v = g;
                for (qt, c) in self.basis.iter().zip(&step.coeffs) {
                    for (vi, qi) in v.iter_mut().zip(qt) {
                        *vi -= c * qi;
                    }
                }
                for vi in v.iter_mut() {
                    *vi /= step.norm;
                }
                for (p, c) in self.pred.iter_mut().zip(coef) {
                    for (pi, vi) in p.iter_mut().zip(&v) {
                        *pi += c * vi;
                    }
                }
                self.basis.push(v);
            }
        }
    }

    fn rmse(&self) -> f64 {
        let n = self.x.rows() * self.y.len();
        let sse: f64 = self
            .y
            .iter()
            .zip(&self.pred)
            .flat_map(|(y, p)| y.iter().zip(p).map(|(a, b)| (a - b) * (a - b)))
            .sum();
        (sse / n as f64).sqrt()
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: GeoNet,
    pub trace: TrainTrace,
}

impl TrainOutcome {
    pub fn status(&self) -> TrainStatus {
        self.trace.status
    }
}

/// Grows a network on `train_set` until the training RMSE (on min-max
/// normalized targets) reaches `config.tol`, the node budget is spent, or
/// node selection stalls.
///
/// Normalization statistics are fitted on `train_set` and reused for
/// `test_set`; both are stored in the returned model.
pub fn train(
    config: &TrainConfig,
    train_set: &Dataset,
    test_set: Option<&Dataset>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.len() < 2 {
        return Err(Error::Data(format!(
            "training needs at least 2 rows, got {}",
            train_set.len()
        )));
    }
    if let Some(t) = test_set {
        if t.n_features() != train_set.n_features() || t.n_targets() != train_set.n_targets() {
            return Err(Error::dim("test set columns differ from the training set"));
        }
    }
    let stats = NormStats::fit(train_set)?;
    let tr = stats.apply(train_set)?;
    let mut held_out = match test_set {
        Some(t) if !t.is_empty() => {
            let t = stats.apply(t)?;
            Some(HeldOut::new(t.x().clone(), t.y()))
        }
        _ => None,
    };

    let mut state = TrainState::new(config.variant, tr.x().clone(), tr.y().clone())?;
    let initial_norms_sq = state.residual().norms_sq().to_vec();
    let initial_rmse = state.residual().rmse();
    let mut records = Vec::new();
    let mut diagnostics = Vec::new();

    let mut spent = Duration::ZERO;
    let mut clock = Instant::now();
    let status = loop {
        if state.residual().rmse() <= config.tol {
            break TrainStatus::ReachedTol;
        }
        if state.len() >= config.l_max {
            break TrainStatus::NodeBudget;
        }
        let index = state.len();
        let sel = match select_node(&state.context(), state.residual(), config, index) {
            Ok(s) => s,
            Err(Error::Stalled { .. }) => break TrainStatus::Stalled,
            Err(e) => return Err(e),
        };
        let gamma_l = gamma(index + 1, config.tau, config.mu)?;
        let CandidateEvaluation { node, g, scores } = sel.candidate;
        let update = state.install_inner(node.clone(), g)?;
        let train_rmse = state.residual().rmse();
        let elapsed_ms = (spent + clock.elapsed()).as_secs_f64() * 1e3;

        let test_rmse = held_out.as_mut().map(|h| {
            spent += clock.elapsed();
            h.apply(&node, state.activation, &update);
            let r = h.rmse();
            clock = Instant::now();
            r
        });

        records.push(TraceRecord {
            l: state.len(),
            scale: sel.scale,
            drawn: sel.drawn,
            passing: sel.passing,
            best_margin: scores.cac_score,
            delta: scores.delta_score,
            train_rmse,
            test_rmse,
            elapsed_ms,
            fallback: sel.fallback_used,
        });
        diagnostics.push(StepDiagnostics {
            gamma: gamma_l,
            residual_norms_sq: state.residual().norms_sq().to_vec(),
        });
    };

    let beta = state.output_weights()?;
    if let Some(last) = records.last_mut() {
        last.elapsed_ms = last
            .elapsed_ms
            .max((spent + clock.elapsed()).as_secs_f64() * 1e3);
    }

    let net = GeoNet::new(
        state.activation,
        state.nodes,
        beta,
        stats,
        ModelMeta {
            variant: config.variant,
            seed: config.seed,
            config: Some(config.clone()),
        },
    )?;
    Ok(TrainOutcome {
        net,
        trace: TrainTrace {
            initial_rmse,
            initial_norms_sq,
            records,
            diagnostics,
            status,
        },
    })
}

/// Training RMSE after each node when the same node sequence is weighted
/// greedily and by least squares.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualPaths {
    pub greedy: Vec<f64>,
    pub global: Vec<f64>,
}

/// Replays `nodes` on normalized data under both output-weight rules.
pub fn residual_paths(
    nodes: &[HiddenNode],
    activation: ActivationKind,
    x: &Matrix,
    targets: &Matrix,
) -> Result<ResidualPaths> {
    let mut greedy = TrainState::new(Variant::LightGcnetI, x.clone(), targets.clone())?;
    let mut global = TrainState::new(Variant::LightGcnetII, x.clone(), targets.clone())?;
    greedy.activation = activation;
    global.activation = activation;
    let mut paths = ResidualPaths {
        greedy: Vec::with_capacity(nodes.len()),
        global: Vec::with_capacity(nodes.len()),
    };
    for node in nodes {
        let g = node.output(activation, x)?;
        greedy.install(node.clone(), g.clone())?;
        global.install(node.clone(), g)?;
        paths.greedy.push(greedy.residual().rmse());
        paths.global.push(global.residual().rmse());
    }
    Ok(paths)
}
