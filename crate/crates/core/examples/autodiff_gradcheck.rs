//! Builds a small two-layer network on the autodiff tape and compares its
//! gradients with central finite differences.

use dagoffload::autodiff::{Graph, ParamId, Tensor};

fn loss(w1: &Tensor, w2: &Tensor) -> Result<(f64, Vec<Tensor>), Box<dyn std::error::Error>> {
    let x = Tensor::matrix(3, 4, (0..12).map(|i| (i as f64 * 0.37).sin()).collect())?;
    let mut g = Graph::new();
    let (a, b) = (g.param(ParamId(0), w1), g.param(ParamId(1), w2));
    let xv = g.constant(x);
    let h = g.matmul(xv, a)?;
    let h = g.layer_norm(h, 1, 1e-5)?;
    let h = g.relu(h)?;
    let logits = g.matmul(h, b)?;
    let logp = g.log_softmax(logits, 1)?;
    let l = g.mean(logp)?;
    let l = g.neg(l)?;
    let grads = g.backward(l)?;
    Ok((g.value(l).item(), vec![grads.param(ParamId(0)).unwrap().clone(), grads.param(ParamId(1)).unwrap().clone()]))
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let w1 = Tensor::matrix(4, 5, (0..20).map(|i| ((i * 7 % 11) as f64 - 5.0) * 0.1).collect())?;
    let w2 = Tensor::matrix(5, 2, (0..10).map(|i| ((i * 3 % 7) as f64 - 3.0) * 0.2).collect())?;
    let (value, grads) = loss(&w1, &w2)?;
    println!("loss {value:.6}");

    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for (which, base) in [&w1, &w2].into_iter().enumerate() {
        for i in 0..base.numel() {
            let bump = |d: f64| {
                let mut p = [w1.clone(), w2.clone()];
                p[which].data_mut()[i] += d;
                loss(&p[0], &p[1]).map(|r| r.0)
            };
            let numeric = (bump(h)? - bump(-h)?) / (2.0 * h);
            let analytic = grads[which].data()[i];
            worst = worst.max((numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-6));
        }
    }
    println!("largest relative error over {} weights: {worst:.2e}", w1.numel() + w2.numel());
    Ok(())
}
