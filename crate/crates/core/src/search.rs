//! Counterfactual visual search: pick the saccade that brings a desired
//! foveal state into the fovea.
//!
//! The policy ([`foveating_saccade`], [`choose_saccade`]) sees prototype
//! indices, the predictive model and the MI tensor only. Raw patches and
//! encoder parameters are used by the task generator and the evaluator.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codebook::PrototypeCodebook;
use crate::encoding::EncoderBank;
use crate::environment::{AgentPose, Environment};
use crate::error::{Error, Result};
use crate::explorer::Perceiver;
use crate::geometry::RetinaGeometry;
use crate::information::MiTensor;
use crate::model::PredictiveModel;
use crate::seeds;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SearchTask {
    /// Desired foveal prototype.
    pub target_j: usize,
    /// Layer-1 field whose content produced the target. Evaluation only.
    pub source_field: usize,
}

/// Picks a random layer-1 field and encodes its raw patch as if it were
/// seen by the fovea.
pub fn make_task<R: Rng + ?Sized>(
    env: &Environment,
    pose: AgentPose,
    geometry: &RetinaGeometry,
    bank: &EncoderBank,
    codebook: &PrototypeCodebook,
    rng: &mut R,
) -> SearchTask {
    let ring = geometry.layer_fields(1);
    let source_field = ring[rng.gen_range(0..ring.len())];
    let patch = env.read_patch(geometry, pose, source_field);
    let fovea = geometry.fovea_index;
    let sv = bank.encode(fovea, &patch);
    SearchTask {
        target_j: codebook.quantize(fovea, &sv),
        source_field,
    }
}

/// The saccade maximizing MI between field `a` before and the fovea after,
/// lowest index on ties.
pub fn foveating_saccade(mi: &MiTensor, a: usize, fovea: usize) -> usize {
    let mut best = 0;
    for q in 1..mi.n_motors {
        if mi.get(a, fovea, q) > mi.get(a, fovea, best) {
            best = q;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaccadeChoice {
    pub field: usize,
    pub motor: usize,
    /// P(target | pre-state of `field`, `motor`).
    pub score: f64,
}

/// Among `candidates` (field, current pre-state), chooses the field whose
/// foveating saccade most probably yields `target_j` in the fovea.
/// Ties go to the earliest candidate; unobserved rows score uniformly.
pub fn choose_saccade(
    model: &PredictiveModel,
    mi: &MiTensor,
    fovea: usize,
    candidates: &[(usize, usize)],
    target_j: usize,
) -> SaccadeChoice {
    let mut best: Option<SaccadeChoice> = None;
    for &(a, i) in candidates {
        let q = foveating_saccade(mi, a, fovea);
        let (score, _) = model.conditional_prob(a, fovea, q, i, target_j);
        if best.is_none_or(|b| score > b.score) {
            best = Some(SaccadeChoice { field: a, motor: q, score });
        }
    }
    best.expect("at least one candidate field")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialLog {
    pub trial: usize,
    pub target_j: usize,
    pub source_field: usize,
    pub chosen_field: usize,
    pub saccade: usize,
    pub achieved_j: usize,
    pub success: bool,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchReport {
    pub trials: Vec<TrialLog>,
    pub success_rate: f64,
}

impl SearchReport {
    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["trial", "target_j", "source_field", "chosen_field", "saccade", "achieved_j", "success"])?;
        for t in &self.trials {
            w.write_record([
                t.trial.to_string(),
                t.target_j.to_string(),
                t.source_field.to_string(),
                t.chosen_field.to_string(),
                t.saccade.to_string(),
                t.achieved_j.to_string(),
                u8::from(t.success).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Runs `n_trials` independent search trials; trial `t` draws its world,
/// pose and task from the seed derived from `seed` and `"search/trial{t}"`.
#[allow(clippy::too_many_arguments)]
pub fn run_search(
    envs: &[Environment],
    model: &PredictiveModel,
    mi: &MiTensor,
    codebook: &PrototypeCodebook,
    bank: &EncoderBank,
    geometry: &RetinaGeometry,
    n_trials: usize,
    seed: u64,
) -> Result<SearchReport> {
    model.check_compatible(geometry, bank, codebook)?;
    if envs.is_empty() {
        return Err(Error::InvalidParameter("search needs at least one environment".into()));
    }
    let fovea = geometry.fovea_index;
    let ring = geometry.layer_fields(1);
    let trials: Vec<TrialLog> = (0..n_trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = seeds::derived_rng(seed, &format!("search/trial{trial}"));
            let env = &envs[rng.gen_range(0..envs.len())];
            let pose = env.random_pose(geometry, &mut rng);
            let task = make_task(env, pose, geometry, bank, codebook, &mut rng);
            let mut perceiver = Perceiver::new(geometry, bank, codebook);
            let candidates: Vec<(usize, usize)> = ring
                .iter()
                .map(|&a| (a, perceiver.field_state(env, pose, a)))
                .collect();
            let choice = choose_saccade(model, mi, fovea, &candidates, task.target_j);
            let after = env.apply_saccade(geometry, pose, &geometry.motors[choice.motor]);
            let achieved_j = perceiver.field_state(env, after, fovea);
            TrialLog {
                trial,
                target_j: task.target_j,
                source_field: task.source_field,
                chosen_field: choice.field,
                saccade: choice.motor,
                achieved_j,
                success: achieved_j == task.target_j,
                score: choice.score,
            }
        })
        .collect();
    let successes = trials.iter().filter(|t| t.success).count();
    let success_rate = if n_trials == 0 { 0.0 } else { successes as f64 / n_trials as f64 };
    Ok(SearchReport { trials, success_rate })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codebook::FieldCodebook;
    use crate::encoding::init_encoders;
    use crate::environment::{generate_squares, SquaresParams};
    use crate::explorer::TransitionRecord;
    use crate::geometry::build_retina;
    use crate::model::CountStore;

    #[test]
    fn foveating_saccade_is_argmax_with_low_ties() {
        let mut mi = MiTensor::zeros(49, 8);
        mi.set(17, 24, 3, 0.9);
        mi.set(17, 24, 5, 0.4);
        assert_eq!(foveating_saccade(&mi, 17, 24), 3);
        mi.set(18, 24, 6, 0.7);
        mi.set(18, 24, 2, 0.7);
        assert_eq!(foveating_saccade(&mi, 18, 24), 2);
        assert_eq!(foveating_saccade(&mi, 30, 24), 0);
    }

    fn toy_model(n_fields: usize) -> PredictiveModel {
        PredictiveModel::new(CountStore::new(vec![3; n_fields], 8), Default::default())
    }

    #[test]
    fn choose_picks_the_certain_field() {
        let mut model = toy_model(5);
        let mut mi = MiTensor::zeros(5, 8);
        // field 3 foveates with q = 6, and its pre-state 1 always yields 2
        mi.set(3, 0, 6, 1.0);
        for _ in 0..4 {
            model.update(&TransitionRecord { a: 3, i: 1, q: 6, b: 0, j: 2 });
        }
        // field 1 has observed rows, none leading to 2
        model.update(&TransitionRecord { a: 1, i: 0, q: 0, b: 0, j: 1 });
        let c = choose_saccade(&model, &mi, 0, &[(1, 0), (3, 1)], 2);
        assert_eq!((c.field, c.motor, c.score), (3, 6, 1.0));
    }

    #[test]
    fn equal_scores_pick_first_candidate() {
        let model = toy_model(5);
        let mi = MiTensor::zeros(5, 8);
        let c = choose_saccade(&model, &mi, 0, &[(2, 0), (1, 1), (4, 2)], 0);
        assert_eq!(c.field, 2);
        assert!((c.score - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn tasks_on_black_world() {
        let g = build_retina();
        let bank = init_encoders(4, &g);
        let mut fields = Vec::new();
        for f in &g.fields {
            let dim = f.d_a;
            let centroids = (0..f.n_states).flat_map(|s| vec![s as f64 * 4.0; dim]).collect();
            fields.push(FieldCodebook { dim, centroids });
        }
        let cb = PrototypeCodebook {
            kmeans_seed: 0,
            sample_count: 0,
            encoder_hash: bank.content_hash(),
            geometry_hash: g.content_hash(),
            fields,
        };
        let black = generate_squares(0, SquaresParams { n_squares: 0, ..Default::default() }).unwrap();
        let expect = cb.quantize(g.fovea_index, &bank.encode(g.fovea_index, &vec![0.0; 144]));
        let mut rng = seeds::rng(1);
        for _ in 0..20 {
            let pose = black.random_pose(&g, &mut rng);
            let t = make_task(&black, pose, &g, &bank, &cb, &mut rng);
            assert_eq!(t.target_j, expect);
            assert_eq!(g.field(t.source_field).layer, 1);
        }
        let t1 = make_task(&black, AgentPose { row: 0, col: 0 }, &g, &bank, &cb, &mut seeds::rng(5));
        let t2 = make_task(&black, AgentPose { row: 0, col: 0 }, &g, &bank, &cb, &mut seeds::rng(5));
        assert_eq!(t1, t2);
    }
}
