use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cyclesum_core::autodiff::{grad_check, ParamStore, Tensor};
use cyclesum_core::losses::check_gradients;
use cyclesum_core::model::CycleNoise;
use cyclesum_core::{CycleSumNets, Dims, LossWeights, Variant};

fn random(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-scale..scale)).collect()).unwrap()
}

#[test]
fn two_layer_net_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut store = ParamStore::new("net");
    store.insert("w1", random(&mut rng, &[3, 5], 0.8)).unwrap();
    store.insert("b1", random(&mut rng, &[5], 0.3)).unwrap();
    store.insert("w2", random(&mut rng, &[5, 2], 0.8)).unwrap();
    store.insert("b2", random(&mut rng, &[2], 0.3)).unwrap();
    let x = random(&mut rng, &[4, 3], 1.0);
    let target = random(&mut rng, &[4, 2], 1.0);
    let mut stores = [store];
    let report = grad_check(&mut stores, 1e-5, 1e-4, |g, b| {
        let p = &b[0];
        let xv = g.constant(x.clone());
        let t = g.constant(target.clone());
        let a = g.matmul(xv, p.get("w1")?)?;
        let a = g.add(a, p.get("b1")?)?;
        let a = g.tanh(a);
        let y = g.matmul(a, p.get("w2")?)?;
        let y = g.add(y, p.get("b2")?)?;
        let y = g.sigmoid(y);
        let d = g.sub(y, t)?;
        let sq = g.square(d);
        Ok(g.mean(sq))
    })
    .unwrap();
    assert!(report.passed(), "max rel err {:.3e}", report.max_rel_err());
}

#[test]
fn shape_and_elementwise_ops_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut store = ParamStore::new("ops");
    store.insert("a", random(&mut rng, &[4, 3], 1.0)).unwrap();
    store.insert("w", random(&mut rng, &[4], 1.0)).unwrap();
    let mut stores = [store];
    let report = grad_check(&mut stores, 1e-5, 1e-4, |g, b| {
        let a = b[0].get("a")?;
        let w = b[0].get("w")?;
        let pos = g.exp(a);
        let l = g.log(pos)?;
        let r = g.sqrt(pos)?;
        let q = g.div(l, r)?;
        let rev = g.reverse_rows(q);
        let top = g.slice_rows(rev, 0, 2)?;
        let rep = g.repeat_rows(top, 2)?;
        let rep = g.reshape(rep, &[4, 3])?;
        let stacked = g.concat(&[rep, a], 1)?;
        let weighted = g.scale_rows(stacked, w)?;
        let cols = g.sum_axis(weighted, 0)?;
        let rows = g.mean_axis(weighted, 1)?;
        let flat = g.reshape(cols, &[2, 3])?;
        let c = g.clamp(flat, -100.0, 100.0);
        let s1 = g.sum(c);
        let s2 = g.sum(rows);
        let s2 = g.scale(s2, 0.5);
        g.add(s1, s2)
    })
    .unwrap();
    assert!(report.passed(), "max rel err {:.3e}", report.max_rel_err());
}

#[test]
fn lstm_layer_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let (k, d, h) = (5, 3, 4);
    let mut store = ParamStore::new("lstm");
    store.insert("w_in", random(&mut rng, &[d, 4 * h], 0.5)).unwrap();
    store.insert("w_rec", random(&mut rng, &[h, 4 * h], 0.5)).unwrap();
    store.insert("bias", random(&mut rng, &[4 * h], 0.2)).unwrap();
    let x = random(&mut rng, &[k, d], 1.0);
    for reverse in [false, true] {
        let mut stores = [store.clone()];
        let report = grad_check(&mut stores, 1e-5, 1e-4, |g, b| {
            let p = &b[0];
            let xv = g.constant(x.clone());
            let out = g.lstm(xv, p.get("w_in")?, p.get("w_rec")?, p.get("bias")?, None, None, reverse)?;
            let hidden = g.slice_rows(out, 0, k)?;
            Ok(g.sum(hidden))
        })
        .unwrap();
        assert!(report.passed(), "reverse {reverse}: max rel err {:.3e}", report.max_rel_err());
    }
}

#[test]
fn single_generator_variant_skips_backward_nets() {
    let nets = CycleSumNets::new(Dims::new(3, 4, 2), 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let o = random(&mut rng, &[4, 3], 1.0);
    let noise = CycleNoise::draw(&mut rng, 2);
    let w = LossWeights::for_variant(Variant::OneG);
    let r = check_gradients(&nets, &o, &noise, None, &w, 1e-4, 1e-3).unwrap();
    for p in r.params.iter().filter(|p| p.store == "gen_b" || p.store == "critic_b") {
        assert_eq!(p.max_rel_err, 0.0, "{}.{}", p.store, p.name);
    }
    assert!(check_gradients(&nets, &o, &noise, Some(cyclesum_core::Term::CycleF), &w, 1e-4, 1e-3).is_err());
}
