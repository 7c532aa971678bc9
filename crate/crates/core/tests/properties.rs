use dsmis::bounds::{island_kl, island_sequences, prop4_island_l2};
use dsmis::dsm::{dsm_path_log_density, total_rate, total_rate_delta};
use dsmis::estimator::{chebychev_sample_size, log_importance_weight, NStarConvention};
use dsmis::ism::{ism_path_log_density, sample_joint_path};
use dsmis::oracle::enumerate_orderings;
use dsmis::rng::worker_stream;
use dsmis::seq::{merge_site_paths, parse_fasta_pair, path_from_jsonl, path_to_jsonl, validate_path};
use dsmis::series::log_sum_exp;
use dsmis::{make_cpg_model, Alphabet, CpgParams, IsmModel, Jump, Sequence, SequencePair};
use proptest::prelude::*;

fn dna(len: std::ops::Range<usize>) -> impl Strategy<Value = Vec<u8>> {
    prop::collection::vec(0u8..4, len)
}

fn pair_strategy() -> impl Strategy<Value = SequencePair> {
    dna(3..14).prop_flat_map(|x| {
        let n = x.len();
        (Just(x), prop::collection::vec(prop::option::weighted(0.3, 0u8..4), n))
    })
    .prop_map(|(x, edits)| {
        let y: Vec<u8> = x.iter().zip(&edits).map(|(&b, e)| e.unwrap_or(b)).collect();
        let a = Alphabet::dna();
        SequencePair::new(Sequence::from_indices(x, &a).unwrap(), Sequence::from_indices(y, &a).unwrap()).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn fasta_round_trip(pair in pair_strategy()) {
        let a = Alphabet::dna();
        let text = pair.to_fasta(&a, ("x", "y"));
        prop_assert_eq!(parse_fasta_pair(&text, &a).unwrap(), pair);
    }

    #[test]
    fn sampled_paths_split_merge_and_serialize(pair in pair_strategy(), t in 0.01f64..2.0, seed in any::<u64>()) {
        let a = Alphabet::dna();
        let model = IsmModel::jc69();
        let path = sample_joint_path(&model, &pair, t, &mut worker_stream(seed, 0)).unwrap();
        prop_assert!(validate_path(&path, &pair).is_valid());
        let parts: Vec<_> = (0..pair.len()).map(|i| (i, path.site_path(i))).collect();
        prop_assert_eq!(&merge_site_paths(parts).unwrap(), &path);
        let back = path_from_jsonl(&path_to_jsonl(&path, &a), &a, t).unwrap();
        prop_assert_eq!(back, path);
    }

    #[test]
    fn log_weight_is_density_difference(pair in pair_strategy(), t in 0.01f64..1.0, lambda in 0.05f64..20.0, seed in any::<u64>()) {
        let model = make_cpg_model(CpgParams::new(lambda)).unwrap();
        let path = sample_joint_path(model.ism(), &pair, t, &mut worker_stream(seed, 1)).unwrap();
        let w = log_importance_weight(&model, &path, &pair, t).unwrap();
        let direct = dsm_path_log_density(&model, &path, &pair, t).unwrap() - ism_path_log_density(model.ism(), &path, &pair, t).unwrap();
        prop_assert!((w.log_w - direct).abs() <= 1e-10 * direct.abs().max(1.0));
        prop_assert_eq!(w.m, path.len());
    }

    #[test]
    fn unit_lambda_weights_vanish(pair in pair_strategy(), t in 0.01f64..1.0, seed in any::<u64>()) {
        let model = make_cpg_model(CpgParams::new(1.0)).unwrap();
        let path = sample_joint_path(model.ism(), &pair, t, &mut worker_stream(seed, 2)).unwrap();
        prop_assert_eq!(log_importance_weight(&model, &path, &pair, t).unwrap().log_w, 0.0);
    }

    #[test]
    fn incremental_rate_tracks_full_scan(
        x in dna(3..40),
        moves in prop::collection::vec((any::<prop::sample::Index>(), 1u8..4), 1..60),
        lambda in 0.01f64..50.0,
    ) {
        let a = Alphabet::dna();
        let model = make_cpg_model(CpgParams::new(lambda)).unwrap();
        let mut seq = Sequence::from_indices(x, &a).unwrap();
        let mut running = total_rate(&model, &seq);
        for (k, (idx, shift)) in moves.into_iter().enumerate() {
            let site = idx.index(seq.len());
            let base = (seq.get(site) + shift) % 4;
            running += total_rate_delta(&model, &mut seq, &Jump { time: k as f64, site, base }).unwrap();
            let fresh = total_rate(&model, &seq);
            prop_assert!((running - fresh).abs() <= 1e-9 * fresh);
        }
    }

    #[test]
    fn sample_size_is_monotone(a in 1.0f64..1e6, b in 1.0f64..1e6, eps in 0.001f64..0.5) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let n_lo = chebychev_sample_size(eps, lo, NStarConvention::Figure, 0.25).unwrap();
        let n_hi = chebychev_sample_size(eps, hi, NStarConvention::Figure, 0.25).unwrap();
        prop_assert!(n_lo <= n_hi);
        prop_assert!(n_lo as f64 >= lo / (eps * eps) * (1.0 - 1e-9));
    }

    #[test]
    fn log_sum_exp_is_shift_equivariant(v in prop::collection::vec(-700.0f64..700.0, 1..20), c in -1e4f64..1e4) {
        let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
        let (a, b) = (log_sum_exp(&v) + c, log_sum_exp(&shifted));
        prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn ordering_measure_is_normalized(pair in pair_strategy(), lambda in 0.05f64..20.0) {
        prop_assume!(pair.hamming() <= 6);
        let model = make_cpg_model(CpgParams::new(lambda)).unwrap();
        let table = enumerate_orderings(&model, &pair).unwrap();
        let total: f64 = table.phi_tilde.iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        prop_assert!(table.l2 >= 1.0 - 1e-12);
        prop_assert!(table.kl >= -1e-12);
        // L2 >= exp(KL) by Jensen.
        prop_assert!(table.l2 >= table.kl.exp() * (1.0 - 1e-12));
    }

    #[test]
    fn island_closed_forms_match_enumeration(ri in 1usize..4, lambda in 0.05f64..20.0) {
        let model = make_cpg_model(CpgParams::new(lambda)).unwrap();
        let table = enumerate_orderings(&model, &island_sequences(ri).unwrap()).unwrap();
        prop_assert!((table.l2 - prop4_island_l2(ri, lambda)).abs() < 1e-10 * table.l2);
        prop_assert!((table.kl - island_kl(ri, lambda)).abs() < 1e-10);
    }
}
