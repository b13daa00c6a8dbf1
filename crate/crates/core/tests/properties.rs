use pigeonhole::dataset::{ingest, DuplicatePolicy, IncidencePattern, IngestOptions, TripletDataset, TripletRecord};
use pigeonhole::resampling::{naive_replicate, pigeonhole_replicate, run_bootstrap, Scheme, Statistic};
use pigeonhole::statistics::{grand_mean, row_col_means, Observations};
use pigeonhole::variance::{combined_estimate, e_re_naive_variance, v_re, EstimateSign, VarianceComponents};
use proptest::prelude::*;

fn dataset_strategy() -> impl Strategy<Value = TripletDataset> {
    (1usize..8, 1usize..8)
        .prop_flat_map(|(r, c)| {
            proptest::collection::vec(proptest::option::of(-10.0f64..10.0), r * c).prop_map(move |v| (r, c, v))
        })
        .prop_filter_map("non-empty", move |(_, c, cells)| {
            let recs: Vec<TripletRecord> = cells
                .iter()
                .enumerate()
                .filter_map(|(k, v)| v.map(|x| TripletRecord::new(format!("u{}", k / c), format!("m{}", k % c), x)))
                .collect();
            TripletDataset::from_records(recs, DuplicatePolicy::Error).ok()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn summary_identities(ds in dataset_strategy()) {
        let s = ds.summary();
        let n = s.n as f64;
        prop_assert_eq!(s.n_row.iter().sum::<u64>(), s.n);
        prop_assert_eq!(s.n_col.iter().sum::<u64>(), s.n);
        prop_assert!(s.nu_a >= 1.0 && s.nu_a <= n);
        prop_assert!(s.nu_b >= 1.0 && s.nu_b <= n);
        let nu_a = s.n_row.iter().map(|&k| (k * k) as f64).sum::<f64>() / n;
        prop_assert!((s.nu_a - nu_a).abs() <= 1e-12 * nu_a);
        prop_assert!(s.epsilon_n > 0.0 && s.epsilon_n <= 1.0);
        prop_assert!(s.mu_row.iter().chain(&s.mu_col).all(|&m| m > 0.0 && m <= 1.0));
        // Σ_i μ_i• = Σ_j n_•j² / N = ν_B, and symmetrically.
        prop_assert!((s.mu_row.iter().sum::<f64>() - s.nu_b).abs() <= 1e-9 * s.nu_b);
        prop_assert!((s.mu_col.iter().sum::<f64>() - s.nu_a).abs() <= 1e-9 * s.nu_a);
    }

    #[test]
    fn grand_mean_is_weighted_row_mean(ds in dataset_strategy()) {
        let (rows, cols) = row_col_means(&ds);
        let s = ds.summary();
        let n = s.n as f64;
        let g = grand_mean(&ds).unwrap();
        let via_rows: f64 = rows.iter().zip(&s.n_row).map(|(m, &k)| m * k as f64).sum::<f64>() / n;
        let via_cols: f64 = cols.iter().zip(&s.n_col).map(|(m, &k)| m * k as f64).sum::<f64>() / n;
        prop_assert!((g - via_rows).abs() < 1e-9);
        prop_assert!((g - via_cols).abs() < 1e-9);
    }

    #[test]
    fn csv_round_trip(ds in dataset_strategy()) {
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        let back = ingest(buf.as_slice(), &IngestOptions::default()).unwrap();
        prop_assert_eq!(back.pattern(), ds.pattern());
        prop_assert_eq!(back.values(), ds.values());
    }

    #[test]
    fn pigeonhole_draw_invariants(ds in dataset_strategy(), seed in any::<u64>(), b in 0u64..1000) {
        let d = pigeonhole_replicate(&ds, seed, b);
        prop_assert_eq!(d.row_assign.len(), ds.n_rows());
        prop_assert_eq!(d.col_assign.len(), ds.n_cols());
        prop_assert_eq!(d.n_star as usize, d.triplets.len());
        prop_assert_eq!(d.n_tilde_row.iter().sum::<u64>(), d.n_star);
        prop_assert_eq!(d.n_tilde_col.iter().sum::<u64>(), d.n_star);
        for t in &d.triplets {
            // Every realized cell is an original cell at the assigned intersection.
            let src = ds.record(t.source as usize);
            prop_assert_eq!(src.row, d.row_assign[t.row as usize]);
            prop_assert_eq!(src.col, d.col_assign[t.col as usize]);
        }
        // Conversely, every occupied intersection is realized: count them.
        let expected: usize = d.row_assign.iter().map(|&r| {
            d.col_assign.iter().filter(|&&c| ds.pattern().cell_index(r as usize, c as usize).is_some()).count()
        }).sum();
        prop_assert_eq!(expected, d.triplets.len());
        let view = d.view(&ds);
        prop_assert!((0..view.len()).all(|k| ds.values().contains(&view.value(k))));
    }

    #[test]
    fn naive_draw_has_n_records(ds in dataset_strategy(), seed in any::<u64>()) {
        let d = naive_replicate(&ds, seed, 0);
        prop_assert_eq!(d.sources.len(), ds.len());
        prop_assert!(d.sources.iter().all(|&s| (s as usize) < ds.len()));
    }

    #[test]
    fn naive_underestimation_ratio(ds in dataset_strategy(), a in 0.01f64..4.0, b in 0.01f64..4.0, e in 0.01f64..4.0) {
        let s = ds.summary();
        let n = s.n as f64;
        let comp = VarianceComponents::homogeneous(a, b, e, 0.0);
        let ratio = e_re_naive_variance(ds.pattern(), &comp).unwrap() / v_re(ds.pattern(), &comp).unwrap();
        let symbolic = (a * (1.0 - s.nu_a / n) + b * (1.0 - s.nu_b / n) + e * (1.0 - 1.0 / n)) / (s.nu_a * a + s.nu_b * b + e);
        prop_assert!((ratio - symbolic).abs() <= 1e-12 * symbolic.max(1e-300) + 1e-15);
    }

    #[test]
    fn combined_estimate_sign(vp in 0.0f64..10.0, vn in 0.0f64..10.0) {
        let c = combined_estimate(vp, vn);
        prop_assert_eq!(c.value, vp - 2.0 * vn);
        match c.sign {
            EstimateSign::Negative => prop_assert!(c.value < 0.0),
            EstimateSign::Positive => prop_assert!(c.value > 0.0),
            EstimateSign::Boundary => prop_assert!(c.value.abs() < 1e-12 * vp.max(vn).max(1.0)),
        }
    }
}

#[test]
fn bootstrap_is_independent_of_thread_count() {
    let p = IncidencePattern::new(5, 6, (0..30).map(|k| k / 6).collect(), (0..30).map(|k| k % 6).collect()).unwrap();
    let ds = TripletDataset::from_pattern(p, (0..30).map(|k| (k * k % 11) as f64).collect(), None).unwrap();
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| run_bootstrap(&ds, Scheme::Pigeonhole, &Statistic::GrandMean, 400, 99).unwrap())
    };
    let one = run(1);
    let four = run(4);
    assert_eq!(one, four);
    assert_eq!(one.replicates.len() as u64 + one.dropped, 400);
}

#[test]
fn replicate_streams_do_not_depend_on_b() {
    // Replicate i is a pure function of (seed, i): a shorter run is a prefix.
    let p = IncidencePattern::new(3, 3, vec![0, 0, 1, 2, 2], vec![0, 2, 1, 0, 2]).unwrap();
    let ds = TripletDataset::from_pattern(p, vec![1.0, 2.0, 3.0, 4.0, 5.0], None).unwrap();
    for scheme in [Scheme::Naive, Scheme::Pigeonhole] {
        let long = run_bootstrap(&ds, scheme, &Statistic::GrandMean, 300, 5).unwrap();
        let short = run_bootstrap(&ds, scheme, &Statistic::GrandMean, 100, 5).unwrap();
        let prefix: Vec<_> = long.replicates.iter().filter(|r| r.index < 100).cloned().collect();
        assert_eq!(prefix, short.replicates);
    }
}

#[test]
fn sparse_grid_drops_empty_resamples() {
    // A diagonal grid: a resample is empty whenever no row draw matches a column draw.
    let p = IncidencePattern::new(3, 3, vec![0, 1, 2], vec![0, 1, 2]).unwrap();
    let ds = TripletDataset::from_pattern(p, vec![1.0, 2.0, 3.0], None).unwrap();
    let run = run_bootstrap(&ds, Scheme::Pigeonhole, &Statistic::GrandMean, 2000, 1).unwrap();
    assert!(run.dropped > 0);
    assert_eq!(run.replicates.len() as u64 + run.dropped, 2000);
}
