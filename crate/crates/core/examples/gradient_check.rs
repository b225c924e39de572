//! Compares analytic triplet-loss gradients with central differences.
//!
//! ```text
//! cargo run --release --example gradient_check
//! ```

use dayembed::encoder::{self, EncoderConfig, ModelParams};
use dayembed::trainer::{self, TripletIds};

fn loss(params: &ModelParams, config: &EncoderConfig, t: &[Vec<usize>; 3], margin: f64) -> f64 {
    let e: Vec<Vec<f64>> = t.iter().map(|ids| encoder::encode(params, config, ids).unwrap()).collect();
    trainer::triplet_loss(&e[0], &e[1], &e[2], margin).unwrap()
}

fn main() -> dayembed::Result<()> {
    let config = EncoderConfig { d_model: 8, n_layers: 2, n_heads: 2, d_ff: 16, ..EncoderConfig::default() };
    let params = encoder::init_params_seeded(&config, 5)?;
    let t = [vec![0, 1, 1, 2, 3, 5, 6], vec![0, 1, 2, 2, 3, 5, 7], vec![6, 6, 4, 4, 5, 5, 5]];
    // a wide margin keeps the hinge active
    let margin = 3.0;
    let out = trainer::backward(&params, &config, &[TripletIds { anchor: &t[0], positive: &t[1], negative: &t[2] }], margin)?;

    let h = 1e-5;
    let names: Vec<String> = out.grads.named_tensors().into_iter().map(|(n, _)| n).collect();
    for (k, name) in names.iter().enumerate() {
        let analytic = &out.grads.named_tensors()[k].1.data;
        let mut worst = 0.0f64;
        for i in 0..analytic.len() {
            let mut up = params.clone();
            let mut down = params.clone();
            up.tensors_mut()[k].data[i] += h;
            down.tensors_mut()[k].data[i] -= h;
            let numeric = (loss(&up, &config, &t, margin) - loss(&down, &config, &t, margin)) / (2.0 * h);
            let rel = (analytic[i] - numeric).abs() / analytic[i].abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(rel);
        }
        println!("{name:<24} max relative error {worst:.2e}");
    }
    Ok(())
}
