use approx::assert_relative_eq;
use piwno::container::{ArrayData, ArrayFile};
use piwno::experiment::{sample_seed, Stream};
use piwno::form::{form_hlrf, FormOptions};
use piwno::gradients::{sp_gradient_field, NeighborhoodSpec};
use piwno::grid::Grid;
use piwno::reliability::{
    density_mass, estimate_pf_from_peaks, pdf_estimate, std_normal_cdf, std_normal_quantile, threshold_sweep,
};
use piwno::training::relative_l2;
use piwno::wavelet::{self, parse_filter_table, WaveletFamily};
use proptest::prelude::*;

fn signal(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0..10.0f64, len)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn dwt_round_trip_and_energy(x in signal(32 * 32), levels in 1usize..=3) {
        let c = wavelet::forward(WaveletFamily::Db6, &x, &[32, 32], levels).unwrap();
        assert_relative_eq!(c.energy(), norm(&x).powi(2), max_relative = 1e-10);
        let y = wavelet::inverse(&c).unwrap();
        let d: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a - b).collect();
        prop_assert!(norm(&d) <= 1e-9 * norm(&x).max(1.0));
    }

    #[test]
    fn dtcwt_round_trip(x in signal(16 * 16), levels in 1usize..=2) {
        let c = wavelet::forward(WaveletFamily::Dtcwt, &x, &[16, 16], levels).unwrap();
        let y = wavelet::inverse(&c).unwrap();
        let d: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a - b).collect();
        prop_assert!(norm(&d) <= 1e-6 * norm(&x).max(1.0));
    }

    #[test]
    fn forward_transform_is_linear(x in signal(64), y in signal(64), a in -3.0..3.0f64) {
        let f = |v: &[f64]| wavelet::forward(WaveletFamily::Db6, v, &[64], 3).unwrap();
        let mix: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + q).collect();
        let (cx, cy, cm) = (f(&x), f(&y), f(&mix));
        let lhs: Vec<f64> = cm.arrays().flatten().copied().collect();
        let rhs: Vec<f64> = cx.arrays().flatten().zip(cy.arrays().flatten()).map(|(p, q)| a * p + q).collect();
        let d: Vec<f64> = lhs.iter().zip(&rhs).map(|(p, q)| p - q).collect();
        prop_assert!(norm(&d) <= 1e-10 * norm(&rhs).max(1.0));
    }

    #[test]
    fn batched_transform_matches_per_signal(x in signal(3 * 16 * 16)) {
        // batched input is interleaved: field[node * batch + b]
        let interleaved: Vec<f64> = (0..256).flat_map(|n| (0..3).map(move |b| (n, b))).map(|(n, b)| x[b * 256 + n]).collect();
        let batched = wavelet::forward_batch(WaveletFamily::Dtcwt, &interleaved, &[16, 16], 2, 3).unwrap();
        for (b, s) in x.chunks(256).enumerate() {
            let single = wavelet::forward(WaveletFamily::Dtcwt, s, &[16, 16], 2).unwrap();
            for (bb, ss) in batched.arrays().zip(single.arrays()) {
                prop_assert_eq!(bb.len(), 3 * ss.len());
                prop_assert!(ss.iter().enumerate().all(|(i, v)| (bb[i * 3 + b] - v).abs() <= 1e-12 * (1.0 + v.abs())));
            }
        }
    }

    #[test]
    fn sp_gradient_exact_for_affine_fields(
        a in -5.0..5.0f64, b in -5.0..5.0f64, c in -5.0..5.0f64, factor in 1.5..3.0f64,
    ) {
        let g = Grid::unit_square(13).unwrap();
        let u: Vec<f64> = g.node_coords().iter().map(|x| a * x[0] + b * x[1] + c).collect();
        let grad = sp_gradient_field(&u, &g, NeighborhoodSpec::scaled(&g, factor)).unwrap();
        for (axis, slope) in [(0, a), (1, b)] {
            prop_assert!(grad[axis].iter().all(|v| (v - slope).abs() < 1e-8 * (1.0 + slope.abs())));
        }
    }

    #[test]
    fn radius_below_one_and_a_half_spacings_rejected(factor in 0.1..1.49f64) {
        let g = Grid::unit_square(9).unwrap();
        prop_assert!(NeighborhoodSpec::scaled(&g, factor).validate(&g).is_err());
    }

    #[test]
    fn normal_quantile_inverts_cdf(p in 1e-12..(1.0 - 1e-12)) {
        let z = std_normal_quantile(p);
        assert_relative_eq!(std_normal_cdf(z), p, max_relative = 1e-9);
    }

    #[test]
    fn pf_is_a_probability_and_order_free(
        mut peaks in prop::collection::vec(-5.0..5.0f64, 1..200), e in -5.0..5.0f64,
    ) {
        let r = estimate_pf_from_peaks(&peaks, e).unwrap();
        prop_assert!((0.0..=1.0).contains(&r.pf));
        prop_assert_eq!(r.failures, peaks.iter().filter(|&&p| p > e).count());
        peaks.reverse();
        prop_assert_eq!(estimate_pf_from_peaks(&peaks, e).unwrap().pf, r.pf);
    }

    #[test]
    fn sweep_pf_falls_as_threshold_rises(
        peaks in prop::collection::vec(-5.0..5.0f64, 1..200),
        mut ts in prop::collection::vec(-6.0..6.0f64, 2..20),
    ) {
        ts.sort_by(f64::total_cmp);
        let rows = threshold_sweep(&peaks, &ts).unwrap();
        prop_assert!(rows.windows(2).all(|w| w[1].pf <= w[0].pf && w[1].beta >= w[0].beta));
        for r in &rows {
            prop_assert_eq!(r.pf, estimate_pf_from_peaks(&peaks, r.threshold).unwrap().pf);
        }
    }

    #[test]
    fn density_integrates_to_one(samples in prop::collection::vec(-5.0..5.0f64, 10..100)) {
        let d = pdf_estimate(&samples).unwrap();
        prop_assert!(d.y.iter().all(|&v| v >= 0.0));
        assert_relative_eq!(density_mass(&d), 1.0, epsilon = 1e-2);
    }

    #[test]
    fn relative_error_is_scale_invariant(
        t in prop::collection::vec(0.5..5.0f64, 8), p in prop::collection::vec(-5.0..5.0f64, 8), s in 0.1..100.0f64,
    ) {
        let ps: Vec<f64> = p.iter().map(|v| v * s).collect();
        let ts: Vec<f64> = t.iter().map(|v| v * s).collect();
        assert_relative_eq!(relative_l2(&ps, &ts), relative_l2(&p, &t), max_relative = 1e-10);
        prop_assert_eq!(relative_l2(&t, &t), 0.0);
    }

    #[test]
    fn form_index_of_a_hyperplane(
        a in prop::collection::vec(0.2..3.0f64, 1..5), b in 0.5..4.0f64,
    ) {
        // g(u) = b − a·u is linear, so β = b/‖a‖ exactly
        let coef = a.clone();
        let g = move |u: &[f64]| Ok(b - coef.iter().zip(u).map(|(c, x)| c * x).sum::<f64>());
        let r = form_hlrf(&g, &vec![0.0; a.len()], &FormOptions::default()).unwrap();
        prop_assert!(r.converged);
        assert_relative_eq!(r.beta, b / norm(&a), max_relative = 1e-6);
    }

    #[test]
    fn seed_streams_do_not_collide(base in any::<u64>(), i in 0usize..10_000, j in 0usize..10_000) {
        let streams = [Stream::Train, Stream::Holdout, Stream::MonteCarlo, Stream::Kle];
        for (k, &s) in streams.iter().enumerate() {
            prop_assert_eq!(sample_seed(base, s, i), sample_seed(base, s, i));
            for &t in &streams[k + 1..] {
                prop_assert_ne!(sample_seed(base, s, i), sample_seed(base, t, j));
            }
        }
    }

    #[test]
    fn container_round_trips(
        values in prop::collection::vec(any::<f64>(), 0..64),
        seeds in prop::collection::vec(any::<u64>(), 0..16),
        raw in prop::collection::vec(any::<u8>(), 0..32),
        tag in "[a-z]{1,12}",
    ) {
        let mut f = ArrayFile::new(serde_json::json!({ "kind": tag }));
        f.push_f64("values", &[values.len()], values.clone()).unwrap();
        f.push("seeds", &[seeds.len()], ArrayData::U64(seeds)).unwrap();
        f.push("raw", &[raw.len()], ArrayData::U8(raw)).unwrap();
        let back = ArrayFile::decode(&f.encode().unwrap()).unwrap();
        let (_, v) = back.f64("values").unwrap();
        // compare bit patterns so NaN payloads count too
        prop_assert!(v.iter().zip(&values).all(|(a, b)| a.to_bits() == b.to_bits()));
        prop_assert_eq!(back.arrays.len(), 3);
        prop_assert_eq!(&back.header, &f.header);
    }

    #[test]
    fn decoding_garbage_never_panics(bytes in prop::collection::vec(any::<u8>(), 0..512)) {
        let _ = ArrayFile::decode(&bytes);
        let mut framed = b"PIWNOARR".to_vec();
        framed.extend_from_slice(&bytes);
        let _ = ArrayFile::decode(&framed);
    }

    #[test]
    fn filter_tables_round_trip(
        taps in prop::collection::btree_map("[a-z][a-z0-9_]{0,8}", prop::collection::vec(-2.0..2.0f64, 1..16), 1..4),
    ) {
        let text: String = taps
            .iter()
            .map(|(k, v)| format!("[{k}]\n{}\n", v.iter().map(|x| format!("{x:e}")).collect::<Vec<_>>().join("\n")))
            .collect();
        prop_assert_eq!(parse_filter_table(&text).unwrap(), taps);
    }

    #[test]
    fn filter_parser_never_panics(text in "\\PC{0,200}") {
        let _ = parse_filter_table(&text);
    }
}
