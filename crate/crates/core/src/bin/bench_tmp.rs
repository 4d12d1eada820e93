use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use xrdattn::tensor::{BnMode, BnStats, Graph};

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let bsz = 64usize;
    let l = 256usize;
    let c = 32usize;
    let k = 4usize;

    let xv: Vec<f64> = (0..bsz * l).map(|_| rng.gen_range(0.0..1.0)).collect();
    let mut convs = Vec::new();
    for li in 0..10 {
        let cin = if li == 0 { 1 } else { c };
        let w: Vec<f64> = (0..k * cin * c).map(|_| rng.gen_range(-0.3..0.3)).collect();
        let b = vec![0.0; c];
        convs.push((w, b, cin));
    }
    let head_w: Vec<f64> = (0..l * c).map(|_| rng.gen_range(-0.01..0.01)).collect();

    let iters = 6;
    let mut t_leaf = 0.0;
    let mut t_conv = 0.0;
    let mut t_actbn = 0.0;
    let mut t_attn_mm = 0.0;
    let mut t_softmax = 0.0;
    let mut t_tanh = 0.0;
    let mut t_head = 0.0;
    let mut t_bwd = 0.0;
    let mut sink = 0.0;

    macro_rules! timed {
        ($bucket:expr, $e:expr) => {{
            let t = Instant::now();
            let r = $e;
            $bucket += t.elapsed().as_secs_f64();
            r
        }};
    }

    for it in 0..iters {
        let mut g = Graph::new();
        let x = timed!(t_leaf, g.leaf(xv.clone(), &[bsz, l, 1], false).unwrap());
        let mut h = x;
        let mut q = x;
        let mut stats = BnStats::new(c);
        for (li, (w, b, cin)) in convs.iter().enumerate() {
            let wid = g.leaf(w.clone(), &[k, *cin, c], true).unwrap();
            let bid = g.leaf(b.clone(), &[c], true).unwrap();
            h = timed!(t_conv, g.conv1d(h, wid, bid).unwrap());
            if li == 6 {
                let gamma = g.leaf(vec![1.0; c], &[c], true).unwrap();
                let beta = g.leaf(vec![0.0; c], &[c], true).unwrap();
                h = timed!(
                    t_actbn,
                    g.batchnorm1d(h, gamma, beta, BnMode::Train, &mut stats, 0.1).unwrap()
                );
            }
            h = timed!(t_actbn, g.relu(h).unwrap());
            if li == 5 {
                q = h;
            }
        }
        let kt = timed!(t_attn_mm, g.transpose_last2(h).unwrap());
        let scores = timed!(t_attn_mm, g.matmul(q, kt).unwrap());
        let a = timed!(t_softmax, g.softmax(scores, 2).unwrap());
        let comb = timed!(t_attn_mm, g.matmul(a, h).unwrap());
        let combined = timed!(t_tanh, g.tanh(comb).unwrap());
        let flat = g.reshape(combined, &[bsz, l * c]).unwrap();
        let hw = g.leaf(head_w.clone(), &[l * c, 1], true).unwrap();
        let hb = g.leaf(vec![0.0], &[1], true).unwrap();
        let v = timed!(t_head, g.dense(flat, hw, hb).unwrap());
        let vflat = g.reshape(v, &[bsz]).unwrap();
        let tgt = g.leaf(vec![0.5; bsz], &[bsz], false).unwrap();
        let loss = g.acosh_loss(vflat, tgt).unwrap();
        timed!(t_bwd, g.backward(loss).unwrap());
        sink += g.value(loss).unwrap() + it as f64;
    }
    let n = iters as f64;
    println!("leaf   : {:7.1} ms", t_leaf / n * 1e3);
    println!("conv   : {:7.1} ms", t_conv / n * 1e3);
    println!("bn/relu: {:7.1} ms", t_actbn / n * 1e3);
    println!("attn mm: {:7.1} ms", t_attn_mm / n * 1e3);
    println!("softmax: {:7.1} ms", t_softmax / n * 1e3);
    println!("tanh   : {:7.1} ms", t_tanh / n * 1e3);
    println!("head   : {:7.1} ms", t_head / n * 1e3);
    println!("bwd    : {:7.1} ms", t_bwd / n * 1e3);
    println!("sink {sink:.3}");
}
