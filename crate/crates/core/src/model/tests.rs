use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;

// 3 users, 4 items; every node has at least one neighbour.
fn lists() -> (Vec<Vec<usize>>, Vec<Vec<usize>>) {
    let users = vec![vec![0, 1], vec![1, 2, 3], vec![3]];
    let items = vec![vec![0], vec![0, 1], vec![1], vec![1, 2]];
    (users, items)
}

fn ctx<'a>(user_graph: &'a [Vec<usize>], item_graph: &'a [Vec<usize>]) -> EncodeContext<'a> {
    let (u, i) = lists();
    EncodeContext {
        neighbors: NeighborSource::Fixed {
            users: vec![u],
            items: vec![i],
        },
        user_graph,
        item_graph,
    }
}

fn small(fusion: FusionMode) -> ModelConfig {
    ModelConfig {
        input_dim: 4,
        layer1_dim: 3,
        output_dim: 2,
        fusion,
        ..Default::default()
    }
}

fn set(model: &mut MultiGccf, name: &str, value: Matrix) {
    let id = model.params().find(name).unwrap();
    model.params_mut().get_mut(id).value = value;
}

fn zero_all_but_embeddings(model: &mut MultiGccf) {
    for p in model.params_mut().iter_mut() {
        if !p.name.ends_with("embedding") {
            p.value.fill(0.0);
        }
    }
}

#[test]
fn parameter_layout() {
    let m = MultiGccf::new(small(FusionMode::Attention), 3, 4, 1).unwrap();
    let names: Vec<&str> = m.params().iter().map(|p| p.name.as_str()).collect();
    assert_eq!(names.len(), 2 + 8 + 2 + 2 + 8);
    assert_eq!(m.params().get(m.params().find("user.gcn1.W").unwrap()).shape(), (8, 3));
    assert_eq!(m.params().get(m.params().find("item.gcn2.Q").unwrap()).shape(), (3, 3));
    assert_eq!(m.params().get(m.params().find("user.att.Ws").unwrap()).shape(), (2, 3));
    assert!(!m.params().get(m.embedding_id(Side::User)).regularized);

    let bare = ModelConfig {
        use_mge: false,
        use_skip: false,
        ..small(FusionMode::Sum)
    };
    let b = MultiGccf::new(bare, 3, 4, 1).unwrap();
    assert_eq!(b.params().len(), 10);
    // earlier draws do not depend on which later branches exist
    for p in b.params().iter() {
        let id = m.params().find(&p.name).unwrap();
        assert_eq!(m.params().get(id).value, p.value, "{}", p.name);
    }
}

#[test]
fn zero_weights_give_zero_encoding() {
    let (ug, ig) = (vec![vec![1], vec![0], vec![]], vec![vec![]; 4]);
    let mut m = MultiGccf::new(small(FusionMode::Sum), 3, 4, 7).unwrap();
    zero_all_but_embeddings(&mut m);
    let enc = m.encode(&ctx(&ug, &ig), &[0, 1, 2], &[0, 1, 2, 3]).unwrap();
    for b in [&enc.users, &enc.items] {
        assert!(b.bipar.as_ref().unwrap().as_slice().iter().all(|&x| x == 0.0));
        assert!(b.fused.as_slice().iter().all(|&x| x == 0.0));
    }
}

#[test]
fn multi_graph_and_skip_by_hand() {
    let cfg = ModelConfig {
        input_dim: 2,
        output_dim: 2,
        use_bipar: false,
        ..small(FusionMode::Concat)
    };
    let mut m = MultiGccf::new(cfg, 3, 4, 3).unwrap();
    let e = Matrix::from_rows(&[vec![0.5, -1.0], vec![0.25, 0.5], vec![1.0, 1.0]]).unwrap();
    set(&mut m, "user.embedding", e);
    set(&mut m, "user.mge.M", Matrix::identity(2));
    set(&mut m, "user.skip.S", Matrix::from_rows(&[vec![2.0, 0.0], vec![0.0, -1.0]]).unwrap());
    let ug = vec![vec![1, 2], vec![0], vec![]];
    let ig = vec![vec![]; 4];
    let enc = m.encode(&ctx(&ug, &ig), &[0, 1, 2], &[0]).unwrap();
    let z = enc.users.mge.unwrap();
    assert_eq!(z.row(0), &[1.25f64.tanh(), 1.5f64.tanh()]);
    assert_eq!(z.row(1), &[0.5f64.tanh(), (-1.0f64).tanh()]);
    assert_eq!(z.row(2), &[0.0, 0.0]);
    let s = enc.users.skip.unwrap();
    assert_eq!(s.row(0), &[1.0f64.tanh(), 1.0f64.tanh()]);
    let fused = enc.users.fused;
    assert_eq!(fused.shape(), (3, 4));
    assert_eq!(&fused.row(0)[..2], z.row(0));
    assert_eq!(&fused.row(0)[2..], s.row(0));
}

#[test]
fn sum_fusion_adds_branches() {
    let (ug, ig) = (vec![vec![1], vec![0, 2], vec![1]], vec![vec![1], vec![0], vec![], vec![]]);
    let m = MultiGccf::new(small(FusionMode::Sum), 3, 4, 11).unwrap();
    let enc = m.encode(&ctx(&ug, &ig), &[2, 0, 1], &[3, 1]).unwrap();
    for b in [&enc.users, &enc.items] {
        let expect = b
            .bipar
            .as_ref()
            .unwrap()
            .add(b.mge.as_ref().unwrap())
            .unwrap()
            .add(b.skip.as_ref().unwrap())
            .unwrap();
        let diff = expect.sub(&b.fused).unwrap().max_abs();
        assert!(diff < 1e-15);
    }
}

#[test]
fn attention_weights_form_a_distribution() {
    let (ug, ig) = (vec![vec![1], vec![0, 2], vec![1]], vec![vec![1], vec![0], vec![], vec![]]);
    let m = MultiGccf::new(small(FusionMode::Attention), 3, 4, 5).unwrap();
    let enc = m.encode(&ctx(&ug, &ig), &[0, 1, 2], &[0, 1, 2, 3]).unwrap();
    let a = enc.users.attention.unwrap();
    assert_eq!(a.shape(), (3, 3));
    for r in 0..3 {
        assert!((a.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(a.row(r).iter().all(|&w| w > 0.0));
    }

    let cfg = ModelConfig {
        use_mge: false,
        ..small(FusionMode::Attention)
    };
    let m = MultiGccf::new(cfg, 3, 4, 5).unwrap();
    let a = m.encode(&ctx(&ug, &ig), &[0], &[0]).unwrap().items.attention.unwrap();
    assert_eq!(a.shape(), (1, 2));
    assert!((a.row(0).iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn attention_over_equal_branches_returns_the_branch() {
    let cfg = ModelConfig {
        input_dim: 2,
        output_dim: 2,
        use_bipar: false,
        ..small(FusionMode::Attention)
    };
    let mut m = MultiGccf::new(cfg, 3, 4, 9).unwrap();
    set(&mut m, "user.mge.M", Matrix::identity(2));
    set(&mut m, "user.skip.S", Matrix::identity(2));
    // every user is its own only neighbour, so z == s
    let ug = vec![vec![0], vec![1], vec![2]];
    let ig = vec![vec![]; 4];
    let enc = m.encode(&ctx(&ug, &ig), &[0, 1, 2], &[0]).unwrap();
    let diff = enc.users.fused.sub(enc.users.skip.as_ref().unwrap()).unwrap().max_abs();
    assert!(diff < 1e-15);
}

#[test]
fn zero_embeddings_cost_ln2_per_triplet() {
    let (ug, ig) = (vec![vec![1], vec![0], vec![]], vec![vec![]; 4]);
    let mut m = MultiGccf::new(small(FusionMode::Sum), 3, 4, 2).unwrap();
    for side in [Side::User, Side::Item] {
        let id = m.embedding_id(side);
        m.params_mut().get_mut(id).value.fill(0.0);
    }
    let batch = [
        Triplet { u: 0, i: 1, j: 2 },
        Triplet { u: 2, i: 3, j: 0 },
        Triplet { u: 1, i: 2, j: 0 },
    ];
    let c = ctx(&ug, &ig);
    let mut tape = Tape::new(m.params());
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let loss = m.batch_loss(&mut tape, &batch, &c, &mut rng).unwrap();
    assert!((tape.scalar(loss.pairwise) - 3.0 * std::f64::consts::LN_2).abs() < 1e-12);
    assert_eq!(tape.scalar(loss.embedding_reg), 0.0);
    let expect_reg: f64 = 0.01
        * m.params()
            .iter()
            .filter(|p| p.regularized)
            .map(|p| p.value.sum_squares())
            .sum::<f64>();
    assert!((tape.scalar(loss.weight_reg) - expect_reg).abs() < 1e-12);
}

#[test]
fn bprmf_loss_by_hand() {
    let mut m = Bprmf::new(2, 3, 2, 0.5, 0).unwrap();
    m.params_mut().get_mut(crate::numerics::ParamId(0)).value =
        Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
    m.params_mut().get_mut(crate::numerics::ParamId(1)).value =
        Matrix::from_rows(&[vec![2.0, 0.0], vec![0.0, 0.0], vec![1.0, 1.0]]).unwrap();
    let batch = [Triplet { u: 0, i: 0, j: 2 }];
    let mut tape = Tape::new(m.params());
    let loss = m.batch_loss(&mut tape, &batch).unwrap();
    // x_ui = 2, x_uj = 1
    let expect_pair = -crate::numerics::log_logistic(1.0);
    assert!((tape.scalar(loss.pairwise) - expect_pair).abs() < 1e-12);
    assert!((tape.scalar(loss.weight_reg) - 0.5 * 8.0).abs() < 1e-12);
    assert_eq!(score(&[1.0, 2.0], &[3.0, -1.0]).unwrap(), 1.0);
    assert!(score(&[1.0], &[1.0, 2.0]).is_err());
}

#[test]
fn checkpoint_round_trip_restores_model() {
    let m = MultiGccf::new(small(FusionMode::Attention), 3, 4, 4).unwrap();
    let model = Model::from(m);
    let ckpt = model.to_checkpoint(Some(42)).unwrap();
    let (back, fp) = Model::from_checkpoint(ckpt).unwrap();
    assert_eq!(fp, Some(42));
    assert_eq!(back, model);

    let b = Model::from(Bprmf::new(3, 4, 5, 0.01, 1).unwrap());
    let (back, fp) = Model::from_checkpoint(b.to_checkpoint(None).unwrap()).unwrap();
    assert_eq!((back, fp), (b, None));
}

#[test]
fn warm_start_freezes_tables() {
    let b = Bprmf::new(3, 4, 4, 0.01, 1).unwrap();
    let mut m = MultiGccf::new(small(FusionMode::Sum), 3, 4, 4).unwrap();
    m.warm_start(b.user_table(), b.item_table()).unwrap();
    let id = m.embedding_id(Side::Item);
    assert!(m.params().get(id).frozen);
    assert_eq!(m.params().value(id), b.item_table());
    let wrong = Bprmf::new(3, 4, 5, 0.01, 1).unwrap();
    assert!(m.warm_start(wrong.user_table(), wrong.item_table()).is_err());
}

#[test]
fn embed_all_matches_encode() {
    let (ug, ig) = (vec![vec![1], vec![0, 2], vec![1]], vec![vec![1], vec![0], vec![], vec![]]);
    let m = MultiGccf::new(small(FusionMode::Concat), 3, 4, 8).unwrap();
    let c = ctx(&ug, &ig);
    let all = m.embed_all(&c).unwrap();
    let enc = m.encode(&c, &[0, 1, 2], &[0, 1, 2, 3]).unwrap();
    assert_eq!(all.users, enc.users.fused);
    assert_eq!(all.items, enc.items.fused);
    assert_eq!(all.items.cols(), 6);
}
