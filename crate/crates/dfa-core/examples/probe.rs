use std::path::Path;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let (model, _) = dfa_core::checkpoint::load_bundle(Path::new(&args[1])).unwrap();
    let ds = dfa_core::synth::io::load_dataset(Path::new(&args[2])).unwrap();
    let preds = dfa_core::cascade::predict_dataset(&model, &ds).unwrap();
    let mut scores: Vec<f64> = preds.iter().map(|p| p.routing_score).collect();
    scores.sort_by(|a, b| a.total_cmp(b));
    let pick = |q: f64| scores[((scores.len() - 1) as f64 * q) as usize];
    println!(
        "G: min={:.4} p10={:.4} p50={:.4} p90={:.4} max={:.4}",
        pick(0.0),
        pick(0.1),
        pick(0.5),
        pick(0.9),
        pick(1.0)
    );
    let below = scores.iter().filter(|&&g| g < model.routing.epsilon).count();
    println!(
        "below eps={}: {}/{}",
        model.routing.epsilon,
        below,
        scores.len()
    );
    let mut errs: Vec<f64> = model.routing.cluster_errors.clone();
    errs.sort_by(|a, b| a.total_cmp(b));
    println!("cluster e: min={:.4} med={:.4} max={:.4}", errs[0], errs[errs.len() / 2], errs[errs.len() - 1]);
    let fsum: f64 = preds.iter().map(|p| p.pseudolabels.iter().sum::<f64>()).sum::<f64>() / preds.len() as f64;
    println!("mean sum f_hat = {fsum:.3}");
    // Rescore G with true pseudo-labels recomputed at an alternative
    // temperature (reference-resolution bridge), same centers and errors.
    let t_ref = 20.0 / 224.0;
    let centers = &model.clusters[1].centers;
    let mut alt: Vec<f64> = Vec::new();
    let mut per_subset: std::collections::BTreeMap<&str, (f64, usize, usize)> =
        std::collections::BTreeMap::new();
    for (p, s) in preds.iter().zip(&ds.samples) {
        let delta = dfa_core::pseudolabel::offset_space(&p.stage1, &s.gt).unwrap();
        let f: Vec<f64> = centers
            .iter()
            .map(|c| {
                let d2: f64 = c.iter().zip(&delta).map(|(a, b)| (a - b) * (a - b)).sum();
                (-d2.sqrt() / t_ref).exp()
            })
            .collect();
        let g = dfa_core::cascade::routing_score(&f, &model.routing);
        alt.push(g);
        let sub = s.subset().as_str();
        let e = per_subset.entry(sub).or_insert((0.0, 0, 0));
        e.0 += g;
        e.1 += 1;
        if g < model.routing.epsilon {
            e.2 += 1;
        }
    }
    alt.sort_by(|a, b| a.total_cmp(b));
    let pick2 = |q: f64| alt[((alt.len() - 1) as f64 * q) as usize];
    println!(
        "G(T=20/224, true f): min={:.4} p10={:.4} p25={:.4} p50={:.4} p75={:.4} p90={:.4} max={:.4}",
        pick2(0.0), pick2(0.1), pick2(0.25), pick2(0.5), pick2(0.75), pick2(0.9), pick2(1.0)
    );
    let below_alt = alt.iter().filter(|&&g| g < model.routing.epsilon).count();
    println!("below eps: {}/{}", below_alt, alt.len());
    for (sub, (sum, n, easy)) in &per_subset {
        println!("  {sub}: mean G={:.4} easy {}/{}", sum / *n as f64, easy, n);
    }
    // Per-stage test NE for context.
    for stage in 1..=3 {
        let mut acc = 0.0;
        let mut n = 0usize;
        for (p, s) in preds.iter().zip(&ds.samples) {
            let flat = match stage {
                1 => &p.stage1,
                2 => &p.stage2,
                _ => &p.stage3,
            };
            let pred =
                dfa_core::geometry::LandmarkSet::from_flat(flat, s.gt.visibility.clone()).unwrap();
            if let Some(m) = dfa_core::geometry::normalized_error(&pred, &s.gt).unwrap().mean {
                acc += m;
                n += 1;
            }
        }
        println!("stage{stage} NE = {:.5}", acc / n as f64);
    }
}
