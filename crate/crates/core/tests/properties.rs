use proptest::collection::vec;
use proptest::prelude::*;

use mcmcnet::analysis::{credible_bounds, error_metrics, hellinger_from_potentials};
use mcmcnet::datagen::{split, DataSet};
use mcmcnet::fem::{FieldKind, ParamField, ProblemKind};
use mcmcnet::mesh::build_disk_mesh;
use mcmcnet::prior::{level_set_map, star_shape_map, FourierSeries, LevelSetSpec, StarShapeSpec};

fn level_set_spec() -> impl Strategy<Value = LevelSetSpec> {
    (1usize..5).prop_flat_map(|bands| {
        (
            vec(0.05f64..2.0, bands - 1),
            -3.0f64..3.0,
            vec(0.1f64..10.0, bands),
        )
            .prop_map(|(gaps, start, values)| {
                let mut thresholds = vec![-1e9];
                let mut c = start;
                for g in gaps {
                    thresholds.push(c);
                    c += g;
                }
                thresholds.push(1e9);
                LevelSetSpec::new(thresholds, values).unwrap()
            })
    })
}

fn star_spec() -> impl Strategy<Value = StarShapeSpec> {
    (
        0.0f64..0.5,
        0.0f64..std::f64::consts::TAU,
        -1.8f64..-0.9,
        vec(-0.15f64..0.15, 4),
        vec(-0.15f64..0.15, 4),
        0.01f64..1.0,
        0.01f64..1.0,
    )
        .prop_map(|(r, angle, a0, cos, sin, k1, k2)| StarShapeSpec {
            centers: vec![[r * angle.cos(), r * angle.sin()]],
            radial: vec![FourierSeries { a0, cos, sin }],
            kappas: vec![k1, k2],
        })
}

fn point_in_disk() -> impl Strategy<Value = [f64; 2]> {
    (0.0f64..1.0, 0.0f64..std::f64::consts::TAU).prop_map(|(r, t)| [r.sqrt() * t.cos(), r.sqrt() * t.sin()])
}

fn tagged_dataset(n: usize) -> DataSet {
    DataSet {
        problem: ProblemKind::Eit,
        input_dim: 1,
        output_rows: 1,
        output_cols: 1,
        inputs: (0..n).map(|i| vec![i as f64]).collect(),
        outputs: (0..n).map(|i| vec![-(i as f64)]).collect(),
        config_hash: [0; 32],
        seed: 0,
    }
}

proptest! {
    #[test]
    fn level_set_is_invariant_under_affine_maps(
        spec in level_set_spec(),
        w in vec(-5.0f64..5.0, 1..40),
        a in 0.1f64..10.0,
        b in -5.0f64..5.0,
    ) {
        let field = ParamField::per_triangle(FieldKind::Conductivity, w.clone());
        let moved = ParamField::per_triangle(FieldKind::Conductivity, w.iter().map(|x| a * x + b).collect());
        let inner = spec.thresholds.len() - 1;
        let moved_spec = LevelSetSpec::new(
            spec.thresholds
                .iter()
                .enumerate()
                .map(|(i, &c)| if i == 0 || i == inner { c } else { a * c + b })
                .collect(),
            spec.values.clone(),
        )
        .unwrap();
        let plain = level_set_map(&field, &spec).unwrap();
        let shifted = level_set_map(&moved, &moved_spec).unwrap();
        // exact ties can flip under rounding; the strategies never produce them
        prop_assert_eq!(&plain.values, &shifted.values);
        prop_assert!(plain.values.iter().all(|v| spec.values.contains(v)));
    }

    #[test]
    fn star_region_is_star_shaped(spec in star_spec(), points in vec(point_in_disk(), 30)) {
        let c = spec.centers[0];
        for p in points.into_iter().filter(|&p| spec.value_at(p) == spec.kappas[0]) {
            for k in 0..=20 {
                let t = k as f64 / 20.0;
                let q = [c[0] + t * (p[0] - c[0]), c[1] + t * (p[1] - c[1])];
                prop_assert_eq!(spec.value_at(q), spec.kappas[0]);
            }
        }
    }

    #[test]
    fn star_map_takes_only_kappa_values(spec in star_spec()) {
        let mesh = build_disk_mesh(2).unwrap();
        let field = star_shape_map(&mesh, &spec).unwrap();
        prop_assert!(field.values.iter().all(|v| spec.kappas.contains(v)));
    }

    #[test]
    fn error_metrics_ordering(pairs in vec((-10.0f64..10.0, -10.0f64..10.0), 1..200)) {
        let (recon, truth): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let r = error_metrics(&recon, &truth).unwrap();
        prop_assert!(r.mae <= r.linf + 1e-12);
        prop_assert!(r.mae * r.mae <= r.mse * (1.0 + 1e-12) + 1e-300);
    }

    #[test]
    fn hellinger_is_bounded_and_shift_invariant(
        phi in vec(0.0f64..50.0, 2..300),
        noise in vec(-5.0f64..5.0, 300),
        c in -100.0f64..100.0,
    ) {
        let phi_theta: Vec<f64> = phi.iter().zip(&noise).map(|(p, n)| p + n).collect();
        let h = hellinger_from_potentials(&phi, &phi_theta).unwrap();
        prop_assert!((0.0..=1.0).contains(&h));
        let shift = |v: &[f64]| v.iter().map(|x| x + c).collect::<Vec<f64>>();
        let shifted = hellinger_from_potentials(&shift(&phi), &shift(&phi_theta)).unwrap();
        prop_assert!((h - shifted).abs() <= 1e-10);
    }

    #[test]
    fn credible_bounds_are_ordered(samples in vec(vec(-5.0f64..5.0, 3), 5..200), level in 0.01f64..0.49) {
        let (lo, hi) = credible_bounds(&samples, |q| Ok(q.to_vec()), level).unwrap();
        for i in 0..3 {
            let min = samples.iter().map(|s| s[i]).fold(f64::INFINITY, f64::min);
            let max = samples.iter().map(|s| s[i]).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(min <= lo[i] && lo[i] <= hi[i] && hi[i] <= max);
        }
    }

    #[test]
    fn credible_bounds_close_on_the_median(samples in vec(-5.0f64..5.0, 5..200)) {
        let rows: Vec<Vec<f64>> = samples.iter().map(|&x| vec![x]).collect();
        let mut sorted = samples.clone();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let median = 0.5 * (sorted[(n - 1) / 2] + sorted[n / 2]);
        let (lo, hi) = credible_bounds(&rows, |q| Ok(q.to_vec()), 0.5 - 1e-9).unwrap();
        prop_assert!((lo[0] - median).abs() < 1e-6 && (hi[0] - median).abs() < 1e-6);
    }

    #[test]
    fn split_partitions_the_dataset(n in 2usize..300, fraction in 0.05f64..0.95, seed in any::<u64>()) {
        let ds = tagged_dataset(n);
        let Ok((train, val)) = split(&ds, fraction, seed) else {
            let n_val = (fraction * n as f64).round() as usize;
            prop_assert!(n_val == 0 || n_val == n);
            return Ok(());
        };
        let mut seen: Vec<usize> = train.inputs.iter().chain(&val.inputs).map(|x| x[0] as usize).collect();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..n).collect::<Vec<_>>());
        for part in [&train, &val] {
            prop_assert!(part.inputs.iter().zip(&part.outputs).all(|(x, y)| x[0] == -y[0]));
        }
        prop_assert_eq!(val.len(), (fraction * n as f64).round() as usize);
    }
}
