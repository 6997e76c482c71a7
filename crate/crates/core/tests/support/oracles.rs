//! Closed-form and protocol checks shared by the integration tests and the
//! acceptance harness.

use daf::data::{NormalizationState, TimeSeriesTable};
use daf::layers::{positional_encode, ResidualBlock, CONV_KERNELS, LSTM_HIDDEN};
use daf::model::{Forecaster, ModelConfig, Side};
use daf::train::{lr_schedule, TrainConfig};
use daf::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Largest deviation of the positional table from
/// `sin/cos(p · exp(−(2i/d)·ln 10000))` over `samples` random
/// `(p, i, d_model)` triples.
pub fn positional_max_error(samples: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let d_model = 2 * rng.random_range(1..=128usize);
        let p = rng.random_range(0..512usize);
        let i = rng.random_range(0..d_model / 2);
        let table = positional_encode(p + 1, d_model).expect("valid table");
        let angle = p as f64 * (-(2.0 * i as f64 / d_model as f64) * 10000f64.ln()).exp();
        worst = worst.max((table.get(p, 2 * i) - angle.sin()).abs());
        worst = worst.max((table.get(p, 2 * i + 1) - angle.cos()).abs());
    }
    worst
}

/// Learning-rate schedule checks: exact powers of the base at epochs 1-3,
/// the published six-digit values, and the recursion up to epoch 100.
pub fn schedule_failures() -> Vec<String> {
    let (lr0, base) = (0.0005, 0.95);
    let mut failures = Vec::new();
    let rel = |a: f64, b: f64| (a - b).abs() / b.abs();
    for (e, exponent, published) in [(1, 1, 0.000475), (2, 3, 0.000428688), (3, 6, 0.000367546)] {
        let lr = lr_schedule(e, lr0, base);
        let exact = lr0 * base.powi(exponent);
        if rel(lr, exact) > 1e-12 {
            failures.push(format!("epoch {e}: {lr} vs lr0·base^{exponent} = {exact}"));
        }
        // Published figures carry six significant digits.
        if (lr - published).abs() > 0.5e-9 + 1e-18 {
            failures.push(format!("epoch {e}: {lr} does not round to {published}"));
        }
    }
    let mut lr = lr0;
    for e in 1..=100 {
        lr *= base.powi(e as i32);
        if rel(lr_schedule(e, lr0, base), lr) > 1e-12 {
            failures.push(format!("epoch {e}: closed form departs from the recursion"));
        }
    }
    failures
}

fn residual_layout(block: Option<&ResidualBlock>, stride: usize, d_model: usize, at: &str, out: &mut Vec<String>) {
    let Some(b) = block else {
        out.push(format!("{at}: residual block missing"));
        return;
    };
    let mut expect = |ok: bool, what: String| {
        if !ok {
            out.push(format!("{at}: {what}"));
        }
    };
    expect(b.stride() == stride, format!("stride {} != {stride}", b.stride()));
    expect(b.kernel_shape() == (stride, d_model), format!("kernel {:?} != ({stride}, {d_model})", b.kernel_shape()));
    expect(b.kernel_count() == 16 && CONV_KERNELS == 16, format!("{} kernels != 16", b.kernel_count()));
    expect(b.lstm1.input_size() == 16, format!("first LSTM input {} != 16", b.lstm1.input_size()));
    expect(
        b.lstm1.hidden_size() == 32 && LSTM_HIDDEN == 32,
        format!("first LSTM width {} != 32", b.lstm1.hidden_size()),
    );
    expect(b.lstm2.input_size() == 32, format!("second LSTM input {} != 32", b.lstm2.input_size()));
    expect(b.lstm2.hidden_size() == d_model, format!("second LSTM width {} != {d_model}", b.lstm2.hidden_size()));
    expect(b.dropout() == 0.5, format!("dropout {} != 0.5", b.dropout()));
}

/// Training and architecture constants read back from freshly built
/// objects; returns every mismatch.
pub fn protocol_failures() -> Vec<String> {
    let mut out = Vec::new();
    let train = TrainConfig::default();
    if train.batch_size != 20 {
        out.push(format!("batch size {} != 20", train.batch_size));
    }
    if train.initial_lr != 0.0005 {
        out.push(format!("initial lr {} != 0.0005", train.initial_lr));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let raw = Tensor::from_fn(50, 3, |_, c| rng.random_range(-100.0..100.0) * (c + 1) as f64);
    let table = TimeSeriesTable::new(vec!["a".into(), "b".into(), "c".into()], raw).expect("finite");
    let state = NormalizationState::fit(table.values()).expect("fit");
    let norm = table.normalize(&state).expect("normalize");
    for c in 0..3 {
        let col = norm.column(c);
        let (lo, hi) = col.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
        if lo != 0.0 || (hi - 1.0).abs() > 1e-15 {
            out.push(format!("column {c} normalizes onto [{lo}, {hi}]"));
        }
    }

    for d_model in [8, 64] {
        let config = ModelConfig { d_model, ..ModelConfig::new(3, vec![0]) };
        let model = Forecaster::new(config, 0).expect("default model");
        for side in [Side::Forward, Side::Backward] {
            let at = format!("{side:?} branch (d_model {d_model})");
            residual_layout(model.branch(side).residual.as_ref(), 3, d_model, &at, &mut out);
        }
        let at = format!("junction (d_model {d_model})");
        residual_layout(model.junction().residual.as_ref(), 2, d_model, &at, &mut out);
    }
    out
}
