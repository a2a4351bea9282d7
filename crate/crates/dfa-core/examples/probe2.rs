use std::path::Path;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let train = dfa_core::synth::io::load_dataset(Path::new(&args[1])).unwrap();
    let val = dfa_core::synth::io::load_dataset(Path::new(&args[2])).unwrap();
    let test = dfa_core::synth::io::load_dataset(Path::new(&args[3])).unwrap();
    let iters: usize = args[4].parse().unwrap();
    let seed: u64 = args[5].parse().unwrap();
    let cfg = dfa_core::config::RunConfig {
        iterations: iters,
        t1: iters / 3,
        t2: 2 * iters / 3,
        log_every: iters / 4,
        ..Default::default()
    };
    let settings = cfg.cascade_settings();
    let vis_arg: bool = args[6].parse().unwrap();
    let pl_arg: bool = args[7].parse().unwrap();
    for (label, vis, pl) in [("arm", vis_arg, pl_arg)] {
        let t0 = std::time::Instant::now();
        let out =
            dfa_core::baselines::train_direct(&train, &val, &settings, seed, vis, pl).unwrap();
        let preds: Vec<Vec<f64>> = test
            .samples
            .iter()
            .map(|s| out.net.predict(&s.image, &[]).unwrap().positions)
            .collect();
        let ne = dfa_core::cascade::mean_prediction_error(&preds, &test);
        println!(
            "{label}: test NE {ne:.5} (val {:.5}) in {:.0}s",
            out.log.last().unwrap().validation_ne,
            t0.elapsed().as_secs_f64()
        );
    }
}
