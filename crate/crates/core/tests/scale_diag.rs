// Temporary diagnostic: learned aleatoric scale vs generator truth.

use evpower_core::data::{fit_normalize, make_windows, split_70_30};
use evpower_core::lstm::{HeadKind, NetworkConfig};
use evpower_core::objectives::{PriorSpec, TNllConfig};
use evpower_core::synth::{default_features, generate_synthetic, CycleSpec, SynthSpec, COL_ACCEL};
use evpower_core::train::{predict_members, train_ensemble, TrainConfig, TrainMode};
use evpower_core::uq::{summarize_t, t_outputs};

#[test]
#[ignore]
fn learned_scale_diag() {
    let spec = SynthSpec {
        cycle: CycleSpec {
            duration_s: 4000.0,
            regen: false,
        },
        ..SynthSpec::default()
    };
    let frame = generate_synthetic(&spec, 77).unwrap();
    let features = default_features();
    let net = NetworkConfig {
        num_layers: 2,
        hidden_dim: 16,
        input_dim: 4,
        head: HeadKind::StudentT,
        dropout_rate: 0.0,
        window: 16,
    };
    let (train_frame, test_frame) = split_70_30(&frame, net.window).unwrap();
    let (train_norm, stats, _) = fit_normalize(&train_frame, &features, None).unwrap();
    let (test_norm, _, _) = fit_normalize(&test_frame, &features, Some(&stats)).unwrap();
    let train_ds = make_windows(&train_norm, &features, net.window).unwrap();
    let test_ds = make_windows(&test_norm, &features, net.window).unwrap();

    let tcfg = TrainConfig {
        members: 5,
        epochs: 100,
        batch_size: 32,
        seed: 2024,
        mode: TrainMode::Anchored,
        mc_samples: 1,
        ..TrainConfig::default()
    };
    let model = train_ensemble(
        &train_ds,
        &stats,
        &net,
        &TNllConfig::default(),
        &PriorSpec::default(),
        &tcfg,
    )
    .unwrap();

    let accel = test_frame.column(COL_ACCEL).unwrap();
    let split_at = test_frame.start_index;
    let scale = stats.target_scale();
    eprintln!("target range: {:.2} kW", scale);

    // bucket by |a| at the window's final step
    let mut agg: Vec<(f64, f64, f64, usize)> = vec![(0.0, 0.0, 0.0, 0); 4];
    for (i, w) in test_ds.inputs.iter().enumerate() {
        let end = test_ds.provenance[i].1 - split_at;
        let a = accel[end].abs();
        let s_true = spec.noise.s0_kw + spec.noise.s1_kw_per_mps2 * a;
        let outs = predict_members(&model, w).unwrap();
        let pairs: Vec<(f64, f64)> = t_outputs(&outs)
            .unwrap()
            .iter()
            .map(|(m, s)| (stats.denormalize_target(*m), s * scale))
            .collect();
        let smry = summarize_t(&pairs, 4.0, 0.1).unwrap();
        let s_learned = smry.s2_mean.sqrt();
        let bucket = if a < 0.05 {
            0
        } else if a < 0.3 {
            1
        } else if a < 0.7 {
            2
        } else {
            3
        };
        agg[bucket].0 += s_true;
        agg[bucket].1 += s_learned;
        agg[bucket].2 += smry.eu;
        agg[bucket].3 += 1;
    }
    for (b, (st, sl, eu, n)) in agg.iter().enumerate() {
        if *n > 0 {
            eprintln!(
                "bucket {b}: n={n}, mean s_true={:.3} kW, mean s_learned={:.3} kW, mean EU={:.3} kW",
                st / *n as f64,
                sl / *n as f64,
                eu / *n as f64
            );
        }
    }
}
