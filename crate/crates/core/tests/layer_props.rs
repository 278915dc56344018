mod common;

use proptest::prelude::*;
use vern::graph::WsiGraph;
use vern::layers::{gcn_forward, sage_forward, GcnParams, SageParams};
use vern::numerics::{Tape, Tensor};

use common::{permute_graph, random_graph, rng, shuffled, uniform};

fn gcn_out(g: &WsiGraph, h: &Tensor, p: &GcnParams) -> Tensor {
    let tape = Tape::new();
    let a = tape.constant(&g.norm_adj);
    let x = tape.constant(h);
    let out = gcn_forward(&tape, a, x, &p.bind(&tape)).unwrap();
    let v = tape.value(out).clone();
    v
}

fn sage_out(g: &WsiGraph, h: &Tensor, p: &SageParams) -> Tensor {
    let tape = Tape::new();
    let x = tape.constant(h);
    let out = sage_forward(&tape, g.adj.neighbors(), x, &p.bind(&tape)).unwrap();
    let v = tape.value(out).clone();
    v
}

fn with_bias(mut p: GcnParams, seed: u64) -> GcnParams {
    let d = p.bias.cols();
    p.bias = uniform(&mut rng(seed), 1, d, -0.5, 0.5);
    p
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn layers_are_permutation_equivariant(seed in any::<u64>(), n in 1usize..30, d in 1usize..6) {
        let mut r = rng(seed);
        let g = random_graph(&mut r, n, d, 1, 9);
        let perm = shuffled(&mut r, n);
        let h = permute_graph(&g, &perm, 9);
        let gcn = with_bias(GcnParams::init(d, 4, &mut r), seed ^ 1);
        let mut sage = SageParams::init(d, 3, &mut r);
        sage.bias = uniform(&mut r, 1, 3, -0.5, 0.5);

        let base = gcn_out(&g, &g.feat_a, &gcn).select_rows(&perm);
        prop_assert!(gcn_out(&h, &h.feat_a, &gcn).max_abs_diff(&base) <= 1e-10);
        let base = sage_out(&g, &g.feat_a, &sage).select_rows(&perm);
        prop_assert!(sage_out(&h, &h.feat_a, &sage).max_abs_diff(&base) <= 1e-10);
    }

    #[test]
    fn edgeless_gcn_is_a_dense_layer(seed in any::<u64>(), n in 1usize..10, d in 1usize..6) {
        let mut r = rng(seed);
        let h = uniform(&mut r, n, d, -2.0, 2.0);
        let p = with_bias(GcnParams::init(d, 3, &mut r), seed ^ 2);
        let tape = Tape::new();
        let eye = Tensor::identity(n);
        let out = gcn_forward(&tape, tape.constant(&eye), tape.constant(&h), &p.bind(&tape)).unwrap();
        let mut want = h.matmul(&p.weight).unwrap();
        for row in 0..n {
            for (o, b) in want.row_mut(row).iter_mut().zip(p.bias.data()) {
                *o += b;
            }
        }
        prop_assert_eq!(&*tape.value(out), &want.relu());
    }

    #[test]
    fn sage_output_ignores_non_neighbors(seed in any::<u64>(), n in 3usize..25) {
        let mut r = rng(seed);
        let g = random_graph(&mut r, n, 3, 1, 2);
        let p = SageParams::init(3, 4, &mut r);
        let base = sage_out(&g, &g.feat_a, &p);
        for v in 0..n {
            let far: Vec<usize> = (0..n).filter(|&u| u != v && !g.adj.neighbors()[v].contains(&u)).collect();
            let Some(&u) = far.first() else { continue };
            let mut h = g.feat_a.clone();
            for x in h.row_mut(u) {
                *x += 10.0;
            }
            let moved = sage_out(&g, &h, &p);
            prop_assert_eq!(moved.row(v), base.row(v));
        }
    }
}
