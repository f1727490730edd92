use super::*;
use crate::autodiff::{finite_difference_check, sample_coordinates};
use rand::Rng;
use crate::graph::{Adjacency, Provenance, SparseGraph};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn random_graph(n: usize, f: usize, p: f64, seed: u64) -> SparseGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let edges: Vec<_> = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .collect::<Vec<_>>()
        .into_iter()
        .filter(|_| rng.random_bool(p))
        .collect();
    let x = DenseMat::from_fn(n, f, |_, _| if rng.random_bool(0.4) { 1.0 } else { 0.0 });
    SparseGraph::new(Adjacency::from_edges(n, edges).unwrap(), x).unwrap()
}

fn params(mode: EncoderMode, f: usize, seed: u64) -> ModelParams {
    init_params(mode, f, 6, 4, 5, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

#[test]
fn init_is_deterministic_and_bounded() {
    let a = init_params(EncoderMode::Gcn, 1433, 256, 128, 128, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let b = init_params(EncoderMode::Gcn, 1433, 256, 128, 128, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    assert_eq!(a, b);
    let bound = (6.0f64 / (1433.0 + 256.0)).sqrt();
    assert!(a.encoder.w1.max_abs() <= bound);
    assert!(a.encoder.w1.max_abs() > 0.9 * bound);
    assert_eq!(a.encoder.slope, 0.25);
    assert_eq!(a.projection.b1, DenseMat::zeros(1, 128));
    assert!(init_params(EncoderMode::Gcn, 4, 4, 4, 0, &mut ChaCha8Rng::seed_from_u64(3)).is_err());
}

#[test]
fn isolated_node_forward_by_hand() {
    let mut p = params(EncoderMode::Gcn, 2, 0);
    p.encoder.w1 = DenseMat::identity(2);
    p.encoder.w2 = Some(DenseMat::identity(2));
    let g = SparseGraph::new(Adjacency::empty(1), DenseMat::from_rows(&[vec![1.0, -2.0]]).unwrap()).unwrap();
    let z = embed(&p, &View::clean(&g)).unwrap();
    assert_eq!(z, DenseMat::from_rows(&[vec![1.0, -0.5]]).unwrap());
}

#[test]
fn gcn_is_permutation_equivariant() {
    let g = random_graph(15, 7, 0.3, 1);
    let p = params(EncoderMode::Gcn, 7, 2);
    let perm: Vec<usize> = (0..15).rev().collect();
    // perm[old] = new; row `new` of the permuted features is row `old`.
    let mut inverse = vec![0; 15];
    for (old, &new) in perm.iter().enumerate() {
        inverse[new] = old;
    }
    let permuted = View::new(
        g.adjacency.permuted(&perm),
        g.features.select_rows(&inverse),
        Provenance::Clean,
    );
    let z = embed(&p, &View::clean(&g)).unwrap();
    let zp = embed(&p, &permuted).unwrap();
    let expect = z.select_rows(&inverse);
    assert!(zp.zip_map(&expect, |a, b| (a - b).abs()).max_abs() < 1e-12);
}

#[test]
fn mlp_ignores_structure() {
    let g = random_graph(12, 5, 0.3, 4);
    let p = params(EncoderMode::Mlp, 5, 5);
    let other = View::new(random_graph(12, 5, 0.6, 9).adjacency, g.features.clone(), Provenance::Clean);
    assert_eq!(embed(&p, &View::clean(&g)).unwrap(), embed(&p, &other).unwrap());
}

#[test]
fn sparse_and_dense_paths_agree() {
    let g = random_graph(20, 6, 0.25, 6);
    let view = View::clean(&g);
    for mode in [EncoderMode::Gcn, EncoderMode::Mlp, EncoderMode::LinearGcn] {
        let p = params(mode, 6, 7);
        let mut tape = Tape::new();
        let vars = p.record(&mut tape, false);
        let dense = GraphInput::dense(&view, &mut tape).unwrap();
        let z = encode(&p, &vars, &dense, &mut tape).unwrap();
        let diff = tape.value(z).zip_map(&embed(&p, &view).unwrap(), |a, b| (a - b).abs());
        assert!(diff.max_abs() < 1e-10, "{mode:?}");
    }
}

#[test]
fn encoder_gradients_match_finite_differences() {
    let g = random_graph(12, 5, 0.3, 8);
    let view = View::clean(&g);
    let p = params(EncoderMode::Gcn, 5, 9);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let readout = DenseMat::from_fn(12, 4, |_, _| rng.random_range(-1.0..1.0));

    // `slot` selects which input the leaf replaces.
    let (p, view, readout) = (&p, &view, &readout);
    let run = |slot: usize| {
        move |t: &mut Tape, leaf: Var| -> Result<Var> {
            let vars = p.record(t, false);
            let vars = ModelVars {
                w1: if slot == 0 { leaf } else { vars.w1 },
                w2: if slot == 1 { Some(leaf) } else { vars.w2 },
                ..vars
            };
            let a = if slot == 2 { leaf } else { t.constant(view.adjacency.to_dense()) };
            let x = if slot == 3 { leaf } else { t.constant(view.features.clone()) };
            let propagation = t.gcn_norm(a)?;
            let input = GraphInput::Dense { adjacency: a, propagation, features: x };
            let z = encode(p, &vars, &input, t)?;
            let r = t.constant(readout.clone());
            let zr = t.hadamard(z, r)?;
            t.sum(zr)
        }
    };
    let points = [
        p.encoder.w1.clone(),
        p.encoder.w2.clone().unwrap(),
        view.adjacency.to_dense(),
        view.features.clone(),
    ];
    for (slot, point) in points.iter().enumerate() {
        let coords = sample_coordinates(point.rows(), point.cols(), 40, &mut rng);
        let err = finite_difference_check(run(slot), point, 1e-6, &coords).unwrap();
        assert!(err < 1e-4, "slot {slot}: {err}");
    }
}

#[test]
fn blocks_round_trip_layout() {
    let mut p = params(EncoderMode::Gcn, 3, 1);
    let sizes: Vec<usize> = p.blocks().iter().map(|b| b.len()).collect();
    let sizes_mut: Vec<usize> = p.blocks_mut().iter().map(|b| b.0.len()).collect();
    assert_eq!(sizes, sizes_mut);
    assert_eq!(sizes, vec![18, 24, 1, 20, 5, 25, 5]);
}
