//! Reverse-mode autodiff on a tiny two-layer network, checked against
//! central finite differences.
//!
//!     cargo run --release --example autodiff

use tumor_retrieval::nn::{Graph, Init, ParamStore};

fn loss(store: &ParamStore, x: &[f64]) -> (Graph, tumor_retrieval::nn::Var) {
    let mut g = Graph::new();
    let ids: Vec<_> = store.ids().collect();
    let input = g.constant(&[2, 3], x.to_vec());
    let (w1, b1, w2, b2) = (g.param(store, ids[0]), g.param(store, ids[1]), g.param(store, ids[2]), g.param(store, ids[3]));
    let h = g.linear(input, w1, b1);
    let h = g.silu(h);
    let y = g.linear(h, w2, b2);
    let y = g.l2_normalize_rows(y);
    let s = g.matmul_nt(y, y);
    (g, s)
}

fn main() {
    let mut store = ParamStore::new(9);
    store.add("w1", &[3, 5], Init::FanIn(3));
    store.add("b1", &[5], Init::Normal(0.1));
    store.add("w2", &[5, 4], Init::FanIn(5));
    store.add("b2", &[4], Init::Normal(0.1));
    let x = [0.3, -1.2, 0.5, 0.9, 0.1, -0.4];
    // Scalar objective: sum of the 2x2 similarity matrix weighted by `seed`.
    let seed = [1.0, -0.5, 0.25, 2.0];
    let objective = |store: &ParamStore| {
        let (g, s) = loss(store, &x);
        g.value(s).iter().zip(seed).map(|(a, b)| a * b).sum::<f64>()
    };

    let (g, s) = loss(&store, &x);
    let mut grads = store.zero_grads();
    g.backward(&[(s, &seed)], &store, &mut grads);
    println!("{} tape nodes, {} parameters", g.len(), store.count());

    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for id in store.ids().collect::<Vec<_>>() {
        for i in 0..store.values(id).len() {
            let orig = store.values(id)[i];
            store.values_mut(id)[i] = orig + h;
            let up = objective(&store);
            store.values_mut(id)[i] = orig - h;
            let down = objective(&store);
            store.values_mut(id)[i] = orig;
            let fd = (up - down) / (2.0 * h);
            let ad = grads.get(id)[i];
            worst = worst.max((fd - ad).abs() / fd.abs().max(1e-6));
        }
        println!("{:<3} analytic {:?}", store.name(id), &grads.get(id)[..3]);
    }
    println!("max relative deviation from finite differences: {worst:.2e}");
}
