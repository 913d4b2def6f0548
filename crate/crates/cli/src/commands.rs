//! Subcommand implementations. Each writes `<out>/<command>.jsonl` and a
//! short summary on stdout.

use maso_core::analysis::{
    bias_ablation_eval, collinear_optimize, network_lipschitz, template_stats, universality_experiment,
};
use maso_core::io::svg::{render_histogram, render_neighbor_grid, render_partition2d, NeighborRow};
use maso_core::io::{save_model, Dataset};
use maso_core::linalg::{max_abs_diff, norm, norm_sq, sub};
use maso_core::maso::{ActivationKind, MasoParams, SoftConfig};
use maso_core::partition::{estimate_partition, grid_signature_hashes, occupancy, signature, PartitionStats, Sampler, Scope};
use maso_core::train::{accuracy, train, Targets};
use maso_core::vq::{check_voronoi_equiv, lloyd, maso_from_centroids, vq_distance, VqCorpus};
use maso_core::{rng, MasoError, Network, Result};
use serde_json::json;

use crate::context::{display, Context};
use crate::{Command, Global, ScopeArg};

pub enum Status {
    Ok,
    VerificationFailed,
}

fn status(ok: bool) -> Status {
    if ok {
        Status::Ok
    } else {
        Status::VerificationFailed
    }
}

pub fn run(g: &Global, cmd: Command) -> Result<Status> {
    let ctx = Context::new(g)?;
    match cmd {
        Command::GenData => gen_data(&ctx),
        Command::Train => train_cmd(&ctx),
        Command::Eval => eval(&ctx),
        Command::Decompose { index, level } => decompose(&ctx, index, level),
        Command::Verify { inputs, tol } => verify(&ctx, inputs, tol),
        Command::Templates => templates(&ctx),
        Command::Partition { scope, level } => partition(&ctx, scope, level),
        Command::Occupancy { scope, level } => occupancy_cmd(&ctx, scope, level),
        Command::VqDist { a, b } => vq_dist(&ctx, a, b),
        Command::Retrieve { query, k, image } => retrieve(&ctx, query, k, image.as_deref()),
        Command::Kmeans { samples } => kmeans(&ctx, samples),
        Command::Lipschitz { pairs } => lipschitz(&ctx, pairs),
        Command::Collinear { classes, alpha, dim } => collinear(&ctx, classes, alpha, dim),
        Command::Universal => universal(&ctx),
        Command::SoftMaso => soft_maso(&ctx),
        Command::BiasAblation => bias_ablation(&ctx),
        Command::Render {
            partition,
            histogram,
            neighbors,
        } => render(&ctx, partition, histogram, neighbors),
    }
}

fn item(data: &Dataset, i: usize) -> Result<&Vec<f64>> {
    data.inputs
        .get(i)
        .ok_or_else(|| MasoError::InvalidParam(format!("item {i} out of range (dataset has {})", data.len())))
}

fn scope_of(net: &Network, scope: ScopeArg, level: Option<usize>) -> Scope {
    let l = level.unwrap_or(net.num_levels());
    match scope {
        ScopeArg::Global => Scope::Global(l),
        ScopeArg::Local => Scope::Local(l),
    }
}

fn gen_data(ctx: &Context) -> Result<Status> {
    let data = ctx.dataset()?;
    let path = ctx.path("data.csv");
    let mut w = std::fs::File::create(&path).map(std::io::BufWriter::new)?;
    use std::io::Write;
    for (x, y) in data.inputs.iter().zip(&data.labels) {
        let fields: Vec<String> = x.iter().map(|v| format!("{v:?}")).collect();
        writeln!(w, "{},{y}", fields.join(","))?;
    }
    w.flush()?;
    let mut out = ctx.jsonl("gen-data")?;
    out.emit(json!({"items": data.len(), "dim": data.dim(), "classes": data.classes, "path": display(&path)}))?;
    out.finish()?;
    println!("wrote {} items of dim {} to {}", data.len(), data.dim(), display(&path));
    Ok(Status::Ok)
}

fn train_cmd(ctx: &Context) -> Result<Status> {
    let data = ctx.dataset()?;
    let mut net = ctx.cfg.build_network()?;
    let hist = train(&mut net, &data.inputs, &Targets::Labels(data.labels.clone()), &ctx.cfg.train)?;
    let mut out = ctx.jsonl("train")?;
    for e in &hist.epochs {
        out.emit(serde_json::to_value(e)?)?;
    }
    for w in &hist.warnings {
        out.emit(json!({ "warning": w }))?;
        eprintln!("warning: {w}");
    }
    out.finish()?;
    save_model(&net, Some(ctx.cfg.seed), &ctx.model_path())?;
    if let Some(last) = hist.last() {
        println!(
            "trained {} epochs: loss {:.4}, accuracy {:.3}; model saved to {}",
            last.epoch,
            last.loss,
            last.accuracy.unwrap_or(f64::NAN),
            display(&ctx.model_path())
        );
    }
    Ok(Status::Ok)
}

fn eval(ctx: &Context) -> Result<Status> {
    let data = ctx.dataset()?;
    let (net, src) = ctx.network()?;
    let acc = accuracy(&net, &data.inputs, &data.labels)?;
    let mut out = ctx.jsonl("eval")?;
    out.emit(json!({"model": src, "items": data.len(), "accuracy": acc}))?;
    out.finish()?;
    println!("accuracy {acc:.4} on {} items ({src})", data.len());
    Ok(Status::Ok)
}

fn decompose(ctx: &Context, index: usize, level: Option<usize>) -> Result<Status> {
    let data = ctx.dataset()?;
    let (net, _) = ctx.network()?;
    let x = item(&data, index)?;
    let t = net.forward(x)?;
    let d = net.decompose(&t, level)?;
    let target = match level {
        None => t.logits.clone(),
        Some(l) => t.outputs[net.level_ends()[l - 1] + 1].clone(),
    };
    let residual = d.residual(x, &target)?;
    let rows: Vec<&[f64]> = (0..d.a.rows()).map(|r| d.a.row(r)).collect();
    let mut out = ctx.jsonl("decompose")?;
    out.emit(json!({"index": index, "level": level, "x": x, "a": rows, "b": d.b, "residual": residual}))?;
    out.finish()?;
    println!("A[x] is {}x{}, residual {residual:.3e}", d.a.rows(), d.a.cols());
    Ok(Status::Ok)
}

fn verify(ctx: &Context, inputs: usize, tol: f64) -> Result<Status> {
    let data = ctx.dataset()?;
    let (net, src) = ctx.network()?;
    let stack = net.layer_masos()?;
    let mut worst = 0.0f64;
    let mut worst_stack = 0.0f64;
    let mut template_mismatches = 0;
    let n = inputs.min(data.len());
    for x in data.inputs.iter().take(n) {
        let t = net.forward(x)?;
        let d = net.decompose(&t, None)?;
        worst = worst.max(d.residual(x, &t.logits)?);
        let p = stack.affine_product(x)?;
        worst_stack = worst_stack.max(p.a.max_abs_diff(&d.a)).max(max_abs_diff(&p.b, &d.b));
        for c in 0..net.output_dim() {
            let g = net.input_gradient(x, c)?;
            if g.iter().zip(d.a.row(c)).any(|(a, b)| a.to_bits() != b.to_bits()) {
                template_mismatches += 1;
            }
        }
    }
    let ok = worst <= tol && worst_stack <= tol && template_mismatches == 0;
    let mut out = ctx.jsonl("verify")?;
    out.emit(json!({
        "model": src, "inputs": n, "max_residual": worst, "max_stack_diff": worst_stack,
        "template_gradient_mismatches": template_mismatches, "tol": tol, "pass": ok
    }))?;
    out.finish()?;
    println!("max residual {worst:.3e}");
    println!("max stack difference {worst_stack:.3e}");
    println!("template/gradient mismatches {template_mismatches}");
    println!("{}", if ok { "PASS" } else { "FAIL" });
    Ok(status(ok))
}

fn templates(ctx: &Context) -> Result<Status> {
    let data = ctx.dataset()?;
    let (net, _) = ctx.network()?;
    let s = template_stats(&net, &data.inputs, &data.labels)?;
    let inner = render_histogram(
        "template inner products",
        &[("correct class", &s.inner_correct), ("other classes", &s.inner_incorrect)],
    );
    let cos = render_histogram("template cosine similarity", &[("correct vs other", &s.cosine)]);
    let p1 = ctx.write("templates_inner.svg", &inner)?;
    let p2 = ctx.write("templates_cosine.svg", &cos)?;
    let mut out = ctx.jsonl("templates")?;
    out.emit(serde_json::to_value(&s)?)?;
    out.finish()?;
    println!(
        "mean inner product: correct {:.4}, incorrect {:.4}; mean cosine {:.4}; final-row |cos| {:.4}",
        s.mean_inner_correct, s.mean_inner_incorrect, s.mean_cosine, s.final_row_cosine
    );
    println!("figures: {} {}", display(&p1), display(&p2));
    Ok(Status::Ok)
}

fn write_stats(ctx: &Context, name: &str, stats: &PartitionStats, scope: Scope) -> Result<()> {
    let path = ctx.path(&format!("{name}.csv"));
    let mut w = csv_writer(&path)?;
    use std::io::Write;
    writeln!(w, "hash,count")?;
    for (sig, c) in &stats.occupancy {
        writeln!(w, "{:016x},{c}", sig.hash64())?;
    }
    w.flush()?;
    let mut out = ctx.jsonl(name)?;
    out.emit(json!({
        "scope": format!("{scope:?}"), "samples": stats.samples, "unique": stats.unique(),
        "upper_bound": stats.upper_bound.to_string(), "csv": display(&path)
    }))?;
    out.finish()?;
    println!(
        "{} unique regions from {} samples (upper bound {}); counts in {}",
        stats.unique(),
        stats.samples,
        stats.upper_bound,
        display(&path)
    );
    Ok(())
}

fn csv_writer(path: &std::path::Path) -> Result<std::io::BufWriter<std::fs::File>> {
    Ok(std::io::BufWriter::new(std::fs::File::create(path)?))
}

fn partition(ctx: &Context, scope: ScopeArg, level: Option<usize>) -> Result<Status> {
    let (net, _) = ctx.network()?;
    let scope = scope_of(&net, scope, level);
    let sampler = if net.input_dim() == 2 {
        Sampler::Grid(ctx.cfg.analysis.grid)
    } else {
        let (lo, hi) = ctx.cfg.analysis.grid.x_range;
        Sampler::Uniform {
            n: ctx.cfg.analysis.samples,
            lo,
            hi,
            seed: ctx.cfg.seed,
        }
    };
    let stats = estimate_partition(&net, &sampler, scope)?;
    write_stats(ctx, "partition", &stats, scope)?;
    Ok(Status::Ok)
}

fn occupancy_cmd(ctx: &Context, scope: ScopeArg, level: Option<usize>) -> Result<Status> {
    let data = ctx.dataset()?;
    let (net, _) = ctx.network()?;
    let scope = scope_of(&net, scope, level);
    let stats = occupancy(&net, &data.inputs, scope)?;
    write_stats(ctx, "occupancy", &stats, scope)?;
    Ok(Status::Ok)
}

fn vq_dist(ctx: &Context, a: usize, b: usize) -> Result<Status> {
    let data = ctx.dataset()?;
    let (net, _) = ctx.network()?;
    let scope = Scope::Global(net.num_levels());
    let sa = signature(&net, &net.forward(item(&data, a)?)?, scope)?;
    let sb = signature(&net, &net.forward(item(&data, b)?)?, scope)?;
    let per: Vec<f64> = (1..=net.num_levels()).map(|l| vq_distance(&sa, &sb, l)).collect::<Result<_>>()?;
    let mean = maso_core::vq::vq_distance_mean(&sa, &sb)?;
    let mut out = ctx.jsonl("vq-dist")?;
    out.emit(json!({"a": a, "b": b, "per_level": per, "mean": mean}))?;
    out.finish()?;
    println!("per-level distances {per:?}, mean {mean:.4}");
    Ok(Status::Ok)
}

fn parse_image(s: Option<&str>) -> Result<Option<(usize, usize)>> {
    let Some(s) = s else { return Ok(None) };
    let bad = || MasoError::InvalidParam(format!("image shape {s:?} must look like 28x28"));
    let (r, c) = s.split_once('x').ok_or_else(bad)?;
    Ok(Some((r.parse().map_err(|_| bad())?, c.parse().map_err(|_| bad())?)))
}

fn neighbor_rows(ctx: &Context, net: &Network, data: &Dataset, queries: &[usize], k: usize) -> Result<(Vec<NeighborRow>, Vec<serde_json::Value>)> {
    let corpus = VqCorpus::build(net, data.inputs.clone())?;
    let mut rows = Vec::new();
    let mut records = Vec::new();
    for &q in queries {
        let x = item(data, q)?;
        let hits = corpus.nearest(net, x, ctx.cfg.analysis.vq_level, k + 1)?;
        let hits: Vec<_> = hits.into_iter().filter(|h| h.id != q).take(k).collect();
        records.push(json!({
            "query": q,
            "query_label": data.labels[q],
            "neighbors": hits.iter().map(|h| json!({"id": h.id, "label": data.labels[h.id], "distance": h.distance, "euclidean": h.euclidean})).collect::<Vec<_>>(),
        }));
        rows.push(NeighborRow {
            query: x.clone(),
            neighbors: hits.iter().map(|h| data.inputs[h.id].clone()).collect(),
        });
    }
    Ok((rows, records))
}

fn retrieve(ctx: &Context, query: usize, k: Option<usize>, image: Option<&str>) -> Result<Status> {
    let image = parse_image(image)?;
    let data = ctx.dataset()?;
    let (net, _) = ctx.network()?;
    let k = k.unwrap_or(ctx.cfg.analysis.neighbors);
    let (rows, records) = neighbor_rows(ctx, &net, &data, &[query], k)?;
    let svg = ctx.write("retrieve.svg", &render_neighbor_grid(&rows, image))?;
    let mut out = ctx.jsonl("retrieve")?;
    for r in &records {
        out.emit(r.clone())?;
    }
    out.finish()?;
    let same = records[0]["neighbors"]
        .as_array()
        .map_or(0, |n| n.iter().filter(|h| h["label"] == records[0]["query_label"]).count());
    println!("{same}/{k} neighbours share the query label; figure {}", display(&svg));
    Ok(Status::Ok)
}

fn bounding_box(data: &Dataset) -> (f64, f64) {
    let lo = data.inputs.iter().flatten().copied().fold(f64::INFINITY, f64::min);
    let hi = data.inputs.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        (lo, hi)
    } else {
        (lo - 1.0, lo + 1.0)
    }
}

fn kmeans(ctx: &Context, samples: usize) -> Result<Status> {
    let data = ctx.dataset()?;
    let opts = &ctx.cfg.analysis.kmeans;
    let res = lloyd(&data.inputs, opts.clusters, opts.iterations, ctx.cfg.seed)?;
    let p = maso_from_centroids(&res.centroids);
    let mut code_mismatch = 0;
    for (x, a) in data.inputs.iter().zip(&res.assignments) {
        if p.eval(x)?.1 .0[0] as usize != *a {
            code_mismatch += 1;
        }
    }
    let rep = check_voronoi_equiv(&p, samples, bounding_box(&data), ctx.cfg.seed)?;
    let ok = rep.mismatches == 0;
    let mut out = ctx.jsonl("kmeans")?;
    out.emit(json!({
        "clusters": opts.clusters, "iterations": res.iterations, "objective": res.objective,
        "centroids": res.centroids.mu, "data_code_mismatches": code_mismatch, "voronoi": rep, "pass": ok
    }))?;
    out.finish()?;
    println!(
        "objective {:.4} after {} iterations; Voronoi check {} mismatches, {} near ties ({} samples)",
        res.objective.last().copied().unwrap_or(f64::NAN),
        res.iterations,
        rep.mismatches,
        rep.near_ties,
        rep.samples
    );
    println!("{}", if ok { "PASS" } else { "FAIL" });
    Ok(status(ok))
}

fn lipschitz(ctx: &Context, pairs: usize) -> Result<Status> {
    let (net, _) = ctx.network()?;
    let rep = network_lipschitz(&net)?;
    let mut g = rng::seeded(ctx.cfg.seed);
    let d = net.input_dim();
    let mut worst = 0.0f64;
    for _ in 0..pairs {
        let a = rng::uniform_vec(&mut g, d, -3.0, 3.0);
        let b = rng::uniform_vec(&mut g, d, -3.0, 3.0);
        let r = norm_sq(&sub(&net.logits(&a)?, &net.logits(&b)?)) / norm_sq(&sub(&a, &b));
        worst = worst.max(r);
    }
    let ok = worst <= rep.kappa && worst <= rep.level_product;
    let mut out = ctx.jsonl("lipschitz")?;
    for o in &rep.operators {
        out.emit(json!({ "operator": o }))?;
    }
    out.emit(json!({
        "kappa": rep.kappa, "level_bounds": rep.level_bounds, "level_product": rep.level_product,
        "softmax": rep.softmax, "empirical_max_ratio": worst, "pairs": pairs, "pass": ok
    }))?;
    out.finish()?;
    println!("{:<14} {:>14} {:>14} {:>14}", "operator", "closed form", "maso", "used");
    for o in &rep.operators {
        let cf = o.closed_form.map_or("-".to_string(), |v| format!("{v:.4e}"));
        println!("{:<14} {cf:>14} {:>14.4e} {:>14.4e}", o.operator, o.maso, o.used);
    }
    println!("kappa {:.4e}, level product {:.4e}, sampled max ratio {worst:.4e}", rep.kappa, rep.level_product);
    println!(
        "softmax: (C-1)/C^2 = {:.6}, numerical supremum {:.6}",
        rep.softmax.at_uniform, rep.softmax.supremum
    );
    println!("{}", if ok { "PASS" } else { "FAIL" });
    Ok(status(ok))
}

fn collinear(ctx: &Context, classes: Option<usize>, alpha: Option<f64>, dim: usize) -> Result<Status> {
    let c = match classes {
        Some(c) => c,
        None => ctx.cfg.build_network()?.output_dim(),
    };
    let alpha = alpha.unwrap_or(ctx.cfg.analysis.collinear_alpha);
    let v = rng::normal_vec(&mut rng::seeded(ctx.cfg.seed), dim.max(1), 1.0);
    let n = norm(&v);
    let x: Vec<f64> = v.iter().map(|v| v / n).collect();
    let r = collinear_optimize(&x, 0, c, alpha, 1e-10, ctx.cfg.seed)?;
    let ok = r.max_deviation <= 1e-3 && r.kkt_residual <= 1e-10;
    let (pos, neg) = maso_core::analysis::collinear_scalings(c, alpha);
    let mut out = ctx.jsonl("collinear")?;
    out.emit(json!({
        "classes": c, "alpha": alpha, "correct_scale": pos, "incorrect_scale": neg,
        "max_deviation": r.max_deviation, "kkt_residual": r.kkt_residual, "iterations": r.iterations,
        "loss": r.loss, "pass": ok
    }))?;
    out.finish()?;
    println!(
        "C={c}, alpha={alpha}: predicted scalings {pos:.6} / {neg:.6}; optimizer deviation {:.2e}, KKT residual {:.2e}",
        r.max_deviation, r.kkt_residual
    );
    println!("{}", if ok { "PASS" } else { "FAIL" });
    Ok(status(ok))
}

fn universal(ctx: &Context) -> Result<Status> {
    let u = &ctx.cfg.analysis.universal;
    let target = u.target;
    let f = move |x: &[f64]| target.eval(x);
    let res = universality_experiment(&f, u.input_dim, &u.widths, &u.config)?;
    let mut out = ctx.jsonl("universal")?;
    for w in &res.widths {
        out.emit(serde_json::to_value(w)?)?;
        println!("width {:>4}: median held-out MSE {:.5e}", w.width, w.median_test_mse);
    }
    out.emit(json!({ "widest_beats_narrowest": res.widest_beats_narrowest }))?;
    out.finish()?;
    println!("{}", if res.widest_beats_narrowest { "PASS" } else { "FAIL" });
    Ok(status(res.widest_beats_narrowest))
}

fn soft_maso(ctx: &Context) -> Result<Status> {
    let data = ctx.dataset()?;
    let (net, _) = ctx.network()?;
    let stack = net.layer_masos()?;
    let q = &stack.levels[0];
    let mut out = ctx.jsonl("soft-maso")?;
    for &beta in &ctx.cfg.analysis.soft_betas {
        let cfg = SoftConfig::new(beta)?;
        let mut gap = 0.0f64;
        for x in &data.inputs {
            gap = gap.max(max_abs_diff(&q.eval_soft(x, cfg)?, &q.eval(x)?.0));
        }
        out.emit(json!({"beta": beta, "max_gap_to_hard": gap}))?;
        println!("beta {beta}: max |soft - hard| on level 1 = {gap:.4e}");
    }
    let relu = MasoParams::activation(ActivationKind::Relu, 1)?;
    let half = SoftConfig::new(0.5)?;
    let mut swish_err = 0.0f64;
    for i in 0..=2000 {
        let u = -10.0 + 0.01 * i as f64;
        let s = relu.eval_soft(&[u], half)?[0];
        swish_err = swish_err.max((s - u / (1.0 + (-u).exp())).abs());
    }
    let ok = swish_err <= 1e-12;
    out.emit(json!({"relu_beta_half_vs_u_sigmoid": swish_err, "pass": ok}))?;
    out.finish()?;
    println!("ReLU at beta 0.5 vs u*sigmoid(u): {swish_err:.2e}");
    println!("{}", if ok { "PASS" } else { "FAIL" });
    Ok(status(ok))
}

fn bias_ablation(ctx: &Context) -> Result<Status> {
    let data = ctx.dataset()?;
    let (net, src) = ctx.network()?;
    let r = bias_ablation_eval(&net, &data.inputs, &data.labels)?;
    let mut out = ctx.jsonl("bias-ablation")?;
    out.emit(json!({"model": src, "full": r.full, "template_only": r.template_only}))?;
    out.finish()?;
    println!("{:<16} {:>8}", "predictor", "accuracy");
    println!("{:<16} {:>8.4}", "A[x]x + b[x]", r.full);
    println!("{:<16} {:>8.4}", "A[x]x", r.template_only);
    Ok(Status::Ok)
}

fn render(ctx: &Context, partition: bool, histogram: bool, neighbors: bool) -> Result<Status> {
    let all = !(partition || histogram || neighbors);
    let data = ctx.dataset()?;
    let (net, _) = ctx.network()?;
    let mut written = Vec::new();
    if partition || all {
        if net.input_dim() != 2 {
            if partition {
                return Err(MasoError::InvalidParam("partition rendering needs 2-D inputs".into()));
            }
        } else {
            let grid = ctx.cfg.analysis.grid;
            let scope = Scope::Global(net.num_levels());
            let hashes = grid_signature_hashes(&net, &grid, scope)?;
            let step = (data.len() / 2000).max(1);
            let pts: Vec<(f64, f64, usize)> = data
                .inputs
                .iter()
                .zip(&data.labels)
                .step_by(step)
                .map(|(x, y)| (x[0], x[1], *y))
                .collect();
            written.push(ctx.write("partition.svg", &render_partition2d(&hashes, &grid, &pts))?);
        }
    }
    if histogram || all {
        let s = template_stats(&net, &data.inputs, &data.labels)?;
        written.push(ctx.write(
            "histogram.svg",
            &render_histogram(
                "template inner products",
                &[("correct class", &s.inner_correct), ("other classes", &s.inner_incorrect)],
            ),
        )?);
    }
    if neighbors || all {
        let queries: Vec<usize> = (0..data.len().min(5)).collect();
        let (rows, _) = neighbor_rows(ctx, &net, &data, &queries, ctx.cfg.analysis.neighbors)?;
        written.push(ctx.write("neighbors.svg", &render_neighbor_grid(&rows, None))?);
    }
    let mut out = ctx.jsonl("render")?;
    for p in &written {
        out.emit(json!({ "svg": display(p) }))?;
        println!("wrote {}", display(p));
    }
    out.finish()?;
    Ok(Status::Ok)
}
