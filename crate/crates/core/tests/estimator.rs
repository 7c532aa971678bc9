use std::collections::HashMap;
use std::sync::Arc;

use dsmis::bounds::island_sequences;
use dsmis::dsm::{dsm_path_log_density, FnContext, TableContext};
use dsmis::estimator::{estimate_detailed, log_importance_weight, median_of_estimates};
use dsmis::ism::{ism_marginal_likelihood, ism_path_log_density, sample_joint_path};
use dsmis::oracle::{exact_transition_prob, gillespie_forward};
use dsmis::rng::worker_stream;
use dsmis::{estimate, make_cpg_model, Alphabet, CpgParams, DsmModel, IsmModel, RunConfig, Sequence, SequencePair, SiteGenerator};

fn assert_close_to_oracle(model: &DsmModel, pair: &SequencePair, t: f64, samples: usize, seed: u64) {
    let exact = exact_transition_prob(model, pair, t).unwrap();
    let report = estimate(model, pair, t, &RunConfig::new(samples, seed)).unwrap();
    let rel = (report.p_hat() / exact - 1.0).abs();
    assert!(rel <= 4.0 * report.se_rel + 1e-12, "p_hat {} vs exact {exact}: rel {rel}, se {}", report.p_hat(), report.se_rel);
}

#[test]
fn cpg_estimates_agree_with_oracle() {
    let model = make_cpg_model(CpgParams::new(2.0)).unwrap();
    let pair = SequencePair::parse("ACGTC", "GCATC", &Alphabet::dna()).unwrap();
    assert_close_to_oracle(&model, &pair, 0.5, 40_000, 1);
    let model = make_cpg_model(CpgParams { lambda: 0.3, base_rate: 2.0 }).unwrap();
    assert_close_to_oracle(&model, &island_sequences(1).unwrap(), 0.1, 40_000, 2);
}

#[test]
fn table_model_on_binary_alphabet_agrees_with_oracle() {
    let alphabet = Alphabet::new("01").unwrap();
    let mut phi = HashMap::new();
    for l in ['0', '1'] {
        for c in ['0', '1'] {
            for r in ['0', '1'] {
                let b = if c == '0' { '1' } else { '0' };
                let v = if l == r { 1.7 } else { 0.6 };
                phi.insert(format!("{l}{c}{r}:{b}"), v);
            }
        }
    }
    phi.insert("-10:0".into(), 3.0);
    let table = TableContext::from_keys(2, &alphabet, &phi, None).unwrap();
    let ism = IsmModel::shared(SiteGenerator::from_off_diagonal(2, |i, _| if i == 0 { 0.7 } else { 1.3 }).unwrap());
    let model = DsmModel::new(ism, Arc::new(table)).unwrap();
    let pair = SequencePair::parse("1001101", "0011100", &alphabet).unwrap();
    assert_close_to_oracle(&model, &pair, 0.8, 40_000, 3);
}

#[test]
fn per_site_generators_and_wide_context() {
    let alphabet = Alphabet::dna();
    let gens: Vec<SiteGenerator> = (0..6)
        .map(|s| SiteGenerator::from_off_diagonal(4, |i, j| 0.2 + 0.1 * ((s + i + 2 * j) % 5) as f64).unwrap())
        .collect();
    let ism = IsmModel::per_site(gens).unwrap();
    // Width-4 context: the rate depends on the base two sites to the left.
    let ctx = FnContext::new(4, (0.5, 2.0), |_, w| match w[0] {
        Some(0) => 2.0,
        Some(3) => 0.5,
        _ => 1.0,
    });
    let model = DsmModel::new(ism, Arc::new(ctx)).unwrap();
    let pair = SequencePair::parse("AATCGT", "TACCGA", &alphabet).unwrap();
    assert_close_to_oracle(&model, &pair, 0.6, 40_000, 4);
}

#[test]
fn unit_lambda_reproduces_ism_likelihood() {
    let model = make_cpg_model(CpgParams::new(1.0)).unwrap();
    let pair = SequencePair::parse("TTCGCATT", "TGCGTATA", &Alphabet::dna()).unwrap();
    let (report, weights) = estimate_detailed(&model, &pair, 0.3, &RunConfig::new(500, 8).with_workers(3)).unwrap();
    assert!(weights.iter().all(|w| w.log_w == 0.0));
    let ism = ism_marginal_likelihood(model.ism(), &pair, 0.3).unwrap();
    assert_eq!(report.log_p_hat, ism);
    assert_eq!(report.cv2, 0.0);
    assert_eq!(report.ess, 500.0);
}

#[test]
fn reports_depend_only_on_seed_and_workers() {
    let model = make_cpg_model(CpgParams::new(0.5)).unwrap();
    let pair = island_sequences(2).unwrap();
    let cfg = RunConfig::new(3000, 21).with_workers(4);
    let a = estimate(&model, &pair, 0.2, &cfg).unwrap();
    let b = estimate(&model, &pair, 0.2, &cfg).unwrap();
    assert_eq!(a, b);
    let c = estimate(&model, &pair, 0.2, &cfg.with_workers(3)).unwrap();
    assert_ne!(a.log_p_hat, c.log_p_hat);
    assert!((a.log_p_hat - c.log_p_hat).abs() < 6.0 * (a.se_rel + c.se_rel));
}

#[test]
fn median_of_batches_is_close() {
    let model = make_cpg_model(CpgParams::new(0.5)).unwrap();
    let pair = island_sequences(1).unwrap();
    let exact = exact_transition_prob(&model, &pair, 0.2).unwrap();
    let report = median_of_estimates(&model, &pair, 0.2, &RunConfig::new(4000, 2), 0.05).unwrap();
    assert_eq!(report.batches.as_ref().unwrap().len(), 25);
    assert!((report.p_hat() / exact - 1.0).abs() < 0.05);
}

#[test]
fn extreme_lambda_stays_in_log_space() {
    // Eight islands (r = 16, n = 34): the probabilities are far below the
    // smallest double, yet every weight must be finite and agree with the
    // difference of the two path log-densities.
    let pair = island_sequences(8).unwrap();
    let t = 0.02;
    for lambda in [0.01, 100.0] {
        let model = make_cpg_model(CpgParams::new(lambda)).unwrap();
        let report = estimate(&model, &pair, t, &RunConfig::new(2000, 5)).unwrap();
        assert!(report.log_p_hat.is_finite() && report.cv2.is_finite() && report.ess >= 1.0, "{report:?}");
        let mut rng = worker_stream(17, 0);
        for _ in 0..200 {
            let path = sample_joint_path(model.ism(), &pair, t, &mut rng).unwrap();
            let w = log_importance_weight(&model, &path, &pair, t).unwrap();
            let direct = dsm_path_log_density(&model, &path, &pair, t).unwrap() - ism_path_log_density(model.ism(), &path, &pair, t).unwrap();
            assert!(w.log_w.is_finite());
            assert!((w.log_w - direct).abs() <= 1e-9 * direct.abs().max(1.0), "{} vs {direct}", w.log_w);
        }
    }
}

#[test]
fn gillespie_end_states_match_exact_probabilities() {
    let model = make_cpg_model(CpgParams::new(3.0)).unwrap();
    let alphabet = Alphabet::dna();
    let start = Sequence::parse("ACGT", &alphabet).unwrap();
    let t = 0.3;
    let targets = ["ACGT", "ATGT", "ACAT", "GCGT", "ACGA"];
    let mut counts = vec![0u64; targets.len()];
    let mut rng = worker_stream(2, 2);
    let draws = 40_000;
    for _ in 0..draws {
        let (_, end) = gillespie_forward(&model, &start, t, &mut rng).unwrap();
        if let Some(k) = targets.iter().position(|s| end.render(&alphabet) == *s) {
            counts[k] += 1;
        }
    }
    for (k, target) in targets.iter().enumerate() {
        let pair = SequencePair::parse("ACGT", target, &alphabet).unwrap();
        let p = exact_transition_prob(&model, &pair, t).unwrap();
        let freq = counts[k] as f64 / draws as f64;
        let se = (p * (1.0 - p) / draws as f64).sqrt();
        assert!((freq - p).abs() < 4.5 * se, "{target}: {freq} vs {p}");
    }
}

#[test]
fn exact_rows_sum_to_one() {
    let model = make_cpg_model(CpgParams::new(0.4)).unwrap();
    let alphabet = Alphabet::dna();
    let symbols = ['A', 'C', 'G', 'T'];
    let mut total = 0.0;
    for a in symbols {
        for b in symbols {
            for c in symbols {
                let y: String = [a, b, c].iter().collect();
                let pair = SequencePair::parse("CGA", &y, &alphabet).unwrap();
                total += exact_transition_prob(&model, &pair, 0.7).unwrap();
            }
        }
    }
    assert!((total - 1.0).abs() < 1e-11, "{total}");
}
