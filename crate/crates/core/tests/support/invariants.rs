//! Randomized structural invariants. Each check draws one instance from
//! `rng` and reports the first violated property.

use daf::autodiff::{Graph, Var};
use daf::data::{assemble_predictions, make_windows, TimeSeriesTable};
use daf::layers::{differential_split, NeighborAttention, ResidualBlock, SlidingFusion};
use daf::params::{Ctx, ParamStore};
use daf::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub type Check = fn(&mut ChaCha8Rng) -> Result<(), String>;

pub const ALL: [(&str, Check); 5] = [
    ("differential-split overlap identity", differential_overlap),
    ("attention row-stochasticity", attention_rows_stochastic),
    ("sliding-fusion locality", fusion_locality),
    ("residual identity under annihilation", residual_identity),
    ("overlap-cover bijection", overlap_cover),
];

fn random(rows: usize, cols: usize, scale: f64, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(rows, cols, |_, _| rng.random_range(-scale..scale))
}

fn ensure(ok: bool, what: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(what())
    }
}

/// The three parts share rows: `center[t] = forward[t+1]` and
/// `backward[t] = center[t+1]`, and the difference matrices are exact.
pub fn differential_overlap(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let (rows, d) = (rng.random_range(4..=32), rng.random_range(1..=8));
    let window = random(rows, d, 10.0, rng);
    let s = differential_split(&window).map_err(|e| e.to_string())?;
    let n = rows - 2;
    ensure(s.forward.rows() == n && s.center.rows() == n && s.backward.rows() == n, || {
        format!("part lengths for N={rows}")
    })?;
    for t in 0..n {
        ensure(s.forward.row(t) == window.row(t), || format!("forward row {t}"))?;
        ensure(s.center.row(t) == window.row(t + 1), || format!("center row {t}"))?;
        ensure(s.backward.row(t) == window.row(t + 2), || format!("backward row {t}"))?;
        if t + 1 < n {
            ensure(s.center.row(t) == s.forward.row(t + 1), || format!("center/forward overlap at {t}"))?;
            ensure(s.backward.row(t) == s.center.row(t + 1), || format!("backward/center overlap at {t}"))?;
        }
        for c in 0..d {
            let (x, f, b) = (s.center.get(t, c), s.forward.get(t, c), s.backward.get(t, c));
            ensure(s.diff_forward.get(t, c) == x - f, || format!("forward difference at ({t},{c})"))?;
            ensure(s.diff_backward.get(t, c) == x - b, || format!("backward difference at ({t},{c})"))?;
        }
    }
    Ok(())
}

/// Every neighbor-attention weight row is a probability vector.
pub fn attention_rows_stochastic(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let d_model = 2 * rng.random_range(1..=8);
    let d_attn = rng.random_range(1..=16);
    let heads = rng.random_range(1..=4);
    let n = rng.random_range(1..=16);
    let mut store = ParamStore::new();
    let attn = NeighborAttention::new(&mut store, "attn", d_model, d_attn, heads, rng).map_err(|e| e.to_string())?;
    let scale = [0.1, 1.0, 10.0][rng.random_range(0..3)];
    let (center, side) = (random(n, d_model, scale, rng), random(n, d_model, scale, rng));
    let mut g = Graph::new();
    let params = store.bind(&mut g);
    let mut ctx = Ctx::eval(&mut g, &params);
    let (c, s) = (ctx.graph.constant(center), ctx.graph.constant(side));
    let out = attn.forward(&mut ctx, c, s).map_err(|e| e.to_string())?;
    ensure(out.weights.len() == heads, || "one weight matrix per head".into())?;
    for (h, &w) in out.weights.iter().enumerate() {
        let w = g.value(w);
        ensure(w.shape() == (n, n), || format!("head {h} weights are {:?}", w.shape()))?;
        for r in 0..n {
            let row = w.row(r);
            let sum: f64 = row.iter().sum();
            ensure(row.iter().all(|&v| (0.0..=1.0).contains(&v)), || format!("head {h} row {r} leaves [0,1]"))?;
            ensure((sum - 1.0).abs() <= 1e-9, || format!("head {h} row {r} sums to {sum}"))?;
        }
    }
    Ok(())
}

fn fuse(store: &ParamStore, fusion: &SlidingFusion, stack: &[Tensor]) -> Result<Tensor, String> {
    let mut g = Graph::new();
    let params = store.bind(&mut g);
    let mut ctx = Ctx::eval(&mut g, &params);
    let vars: Vec<Var> = stack.iter().map(|t| ctx.graph.constant(t.clone())).collect();
    let out = fusion.forward(&mut ctx, &vars).map_err(|e| e.to_string())?;
    Ok(g.value(out.fused).clone())
}

/// Perturbing every stacked matrix after step `t` leaves fused rows `0..=t`
/// bitwise unchanged.
pub fn fusion_locality(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let k = rng.random_range(1..=4);
    let (n, d) = (rng.random_range(2..=12), rng.random_range(1..=8));
    let per_timestep = rng.random_bool(0.5).then_some(n);
    let mut store = ParamStore::new();
    let fusion = SlidingFusion::new(&mut store, "fusion", k, per_timestep).map_err(|e| e.to_string())?;
    let cols = store.get(fusion.weights()).cols();
    store.set(fusion.weights(), random(k, cols, 2.0, rng)).map_err(|e| e.to_string())?;
    let stack: Vec<Tensor> = (0..k).map(|_| random(n, d, 3.0, rng)).collect();
    let t = rng.random_range(0..n - 1);
    let mut perturbed = stack.clone();
    for m in &mut perturbed {
        for r in t + 1..n {
            for v in m.row_mut(r) {
                *v += rng.random_range(-5.0..5.0);
            }
        }
    }
    let (a, b) = (fuse(&store, &fusion, &stack)?, fuse(&store, &fusion, &perturbed)?);
    for r in 0..=t {
        ensure(a.row(r) == b.row(r), || format!("row {r} moved after perturbing rows > {t} (k={k}, n={n})"))?;
    }
    Ok(())
}

/// With the network path annihilated the residual block returns its
/// residual input bitwise, in training mode with dropout active.
pub fn residual_identity(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let stride = rng.random_range(2..=3);
    let (n, d) = (rng.random_range(1..=8), rng.random_range(1..=12));
    let mut store = ParamStore::new();
    let block = ResidualBlock::new(&mut store, "res", stride, d, 0.5, rng).map_err(|e| e.to_string())?;
    block.annihilate(&mut store).map_err(|e| e.to_string())?;
    let fused = random(n, d, 5.0, rng);
    let blocks = random(stride * n, d, 5.0, rng);
    let mut drop_rng: ChaCha8Rng = rand::SeedableRng::seed_from_u64(rng.random());
    let mut g = Graph::new();
    let params = store.bind(&mut g);
    let mut ctx = Ctx::train(&mut g, &params, &mut drop_rng);
    let (f, c) = (ctx.graph.constant(fused.clone()), ctx.graph.constant(blocks));
    let out = block.forward(&mut ctx, f, c).map_err(|e| e.to_string())?;
    ensure(g.value(out) == &fused, || format!("stride {stride}, {n}x{d}: output differs from residual input"))
}

/// Assembly writes each covered index exactly once, from the window whose
/// center holds it, and covers the expected contiguous range.
pub fn overlap_cover(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let len = rng.random_range(4..=80);
    let window = rng.random_range(4..=len.min(24));
    let pad = rng.random_bool(0.5);
    let values = Tensor::from_fn(len, 2, |r, c| (r * 2 + c) as f64);
    let table = TimeSeriesTable::new(vec!["y".into(), "x".into()], values).map_err(|e| e.to_string())?;
    let data = make_windows(&table, window, &[0], pad).map_err(|e| e.to_string())?;
    let n = window - 2;
    // Window output row t encodes the series index it was produced at.
    let outputs: Vec<Tensor> =
        data.windows().iter().map(|w| Tensor::from_fn(n, 1, |t, _| (w.first_center + t) as f64)).collect();
    let forecast = assemble_predictions(&outputs, &data).map_err(|e| e.to_string())?;
    let (start, count) = if pad { (0, len) } else { (1, len - 2) };
    ensure(forecast.first_index == start && forecast.len() == count, || {
        format!(
            "T={len} N={window} pad={pad}: covered {}+{}, expected {start}+{count}",
            forecast.first_index,
            forecast.len()
        )
    })?;
    for k in 0..forecast.len() {
        let got = forecast.values.get(k, 0);
        ensure(got == (start + k) as f64, || format!("T={len} N={window} pad={pad}: slot {k} came from index {got}"))?;
    }
    let truth = data.assembled_targets().map_err(|e| e.to_string())?.within(len).map_err(|e| e.to_string())?;
    for (k, target) in truth.target_indices().enumerate() {
        ensure(truth.values.get(k, 0) == (2 * target) as f64, || {
            format!("truth row {k} is not series index {target}")
        })?;
    }
    Ok(())
}
