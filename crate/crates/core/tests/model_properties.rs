mod common;

use msgcn::numeric::rng::{stream, Purpose};
use msgcn::{Mode, Model, ModelConfig, MultiScaleGraph};
use rand::seq::SliceRandom;

fn config(dim: usize, classes: usize) -> ModelConfig {
    ModelConfig {
        hidden_dim: 8,
        num_layers: 3,
        ..ModelConfig::new(dim, classes)
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

pub fn assert_attention_normalized(z: &[f64]) {
    let s32: f32 = z.iter().map(|&x| x as f32).sum();
    assert!((s32 - 1.0).abs() <= 1e-6, "sum z = {s32}");
    assert!((z.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    assert!(z.iter().all(|&x| x > 0.0));
}

#[test]
fn vertex_permutations_leave_logits_and_permute_attention() {
    let g = common::random_graph(21, 60, 3, 6);
    let model = Model::init(config(6, 3), 5).unwrap();
    let base = model.forward(&g, Mode::Eval).unwrap();
    for k in 0..20u64 {
        let mut perm: Vec<usize> = (0..g.num_vertices()).collect();
        perm.shuffle(&mut stream(k, Purpose::Test, &[1]));
        let pg = g.permuted(&perm);
        let r = model.forward(&pg, Mode::Eval).unwrap();
        for (a, b) in base.logits.iter().zip(&r.logits) {
            assert!(rel(*a, *b) <= 1e-9, "permutation {k}: logits {a} vs {b}");
        }
        for (i, &p) in perm.iter().enumerate() {
            assert!(
                rel(base.attention[i], r.attention[p]) <= 1e-12,
                "z[{i}] did not move to {p}"
            );
        }
        assert_attention_normalized(&r.attention);
    }
}

fn state_row(model: &Model, g: &MultiScaleGraph, layer: usize, v: usize) -> Vec<u64> {
    let r = model.forward_inspect(g, Mode::Eval).unwrap();
    let s = &r.per_layer_vertex_states.unwrap()[layer];
    s.row(v).iter().map(|x| x.to_bits()).collect()
}

#[test]
fn receptive_field_is_l_hops() {
    for layers in 1..=4usize {
        let n = layers as u32 + 2;
        let g = common::path_graph(n, 4, layers as u64);
        let cfg = ModelConfig {
            num_layers: layers,
            ..config(4, 2)
        };
        let model = Model::init(cfg, 9).unwrap();
        let before = state_row(&model, &g, layers, 0);

        // far endpoint, distance L + 1: no effect on vertex 0 at layer L
        let mut far = g.clone();
        for x in &mut far.features[(n as usize - 1) * 4..] {
            *x += 3.0;
        }
        assert_eq!(state_row(&model, &far, layers, 0), before, "L={layers}");

        // distance L: does reach vertex 0
        let mut near = g.clone();
        let v = n as usize - 2;
        for x in &mut near.features[v * 4..(v + 1) * 4] {
            *x += 3.0;
        }
        assert_ne!(
            state_row(&model, &near, layers, 0),
            before,
            "L={layers}: perturbation at distance L ignored"
        );
    }
}

#[test]
fn zero_mlp_output_makes_layers_identity() {
    let g = common::random_graph(4, 50, 3, 5);
    let mut model = Model::init(config(5, 2), 2).unwrap();
    for l in 0..3 {
        for name in [format!("gen.{l}.mlp1.weight"), format!("gen.{l}.mlp1.bias")] {
            model.params.get_mut(&name).unwrap().data_mut().fill(0.0);
        }
    }
    let states = model
        .forward_inspect(&g, Mode::Eval)
        .unwrap()
        .per_layer_vertex_states
        .unwrap();
    for l in 1..states.len() {
        assert_eq!(states[l], states[0], "layer {l}");
    }
}

#[test]
fn eval_is_deterministic_and_dropout_is_seeded() {
    let g = common::random_graph(8, 60, 2, 5);
    let mut cfg = config(5, 2);
    cfg.dropout = 0.4;
    let model = Model::init(cfg, 1).unwrap();
    let a = model.forward(&g, Mode::Eval).unwrap();
    let b = model.forward(&g, Mode::Eval).unwrap();
    assert_eq!(a, b);
    let t1 = model.forward(&g, Mode::Train { seed: 3 }).unwrap();
    let t2 = model.forward(&g, Mode::Train { seed: 3 }).unwrap();
    let t3 = model.forward(&g, Mode::Train { seed: 4 }).unwrap();
    assert_eq!(t1, t2);
    assert_ne!(t1.logits, t3.logits);
    assert_ne!(t1.logits, a.logits);
}

#[test]
fn attention_normalized_on_random_graphs() {
    for seed in 0..40u64 {
        let levels = 1 + seed as usize % 4;
        let g = common::random_graph(seed, 150, levels, 7);
        let model = Model::init(config(7, 2 + seed as usize % 5), seed).unwrap();
        let r = model.forward(&g, Mode::Eval).unwrap();
        assert_eq!(r.attention.len(), g.num_vertices());
        assert_attention_normalized(&r.attention);
        let p = r.probabilities();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn orphan_vertices_still_pool() {
    // two level-2 tiles whose level-1 parent failed QC: no edges at all
    let mut feats = msgcn::MemoryFeatures::new(3);
    let tile = |level: u32, row: u32, tissue: bool, f: &mut msgcn::MemoryFeatures| msgcn::TileRecord {
        wsi_id: "o".into(),
        mag_level: level,
        magnification: [1.0, 2.0][level as usize - 1],
        row,
        col: 0,
        tissue,
        feature_file: "o".into(),
        feature_index: f.push("o", vec![row as f32, 1.0, -1.0]),
    };
    let tiles = vec![
        tile(1, 0, false, &mut feats),
        tile(2, 0, true, &mut feats),
        tile(2, 1, true, &mut feats),
    ];
    let g = msgcn::build_graph(&tiles, &feats).unwrap();
    assert_eq!(g.num_vertices(), 2);
    assert_eq!(g.num_edges(), 0);
    let r = Model::init(config(3, 2), 0).unwrap().forward(&g, Mode::Eval).unwrap();
    assert_attention_normalized(&r.attention);
}
