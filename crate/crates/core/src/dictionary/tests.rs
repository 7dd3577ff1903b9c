use super::*;
use crate::geometry::testutil::random_pose;
use crate::geometry::{encode_pose, CylPoseVector};
use crate::numerics::{gradcheck, CounterRng, GradcheckOptions, Matrix, Mode, ParamStore, Tape};

fn random_h(rng: &mut CounterRng, dim: usize) -> CylPoseVector {
    CylPoseVector::new((0..dim).map(|_| rng.normal() * 2.0).collect()).unwrap()
}

const SMALL: [usize; 7] = [12, 6, 6, 12, 6, 6, 12];

#[test]
fn interval_loss_examples() {
    assert_eq!(interval_loss(0.5, -1.0, 1.0), 0.0);
    assert!((interval_loss(1.5, -1.0, 1.0) - 0.5).abs() < 1e-15);
    assert!((interval_loss(-2.0, 0.0, f64::INFINITY) - 2.0).abs() < 1e-15);
}

#[test]
fn loss_dict_examples() {
    let valid = PoseDictionary::new(Matrix::from_vec(4, 1, vec![2.0, 0.6, -0.8, -40.0]).unwrap()).unwrap();
    assert_eq!(loss_dict(&valid), 0.0);
    let cos_bad = PoseDictionary::new(Matrix::from_vec(4, 1, vec![2.0, 1.5, 0.0, 0.0]).unwrap()).unwrap();
    assert!((loss_dict(&cos_bad) - 1.0 / 6.0).abs() < 1e-15);
    let rho_bad = PoseDictionary::new(Matrix::from_vec(4, 1, vec![-0.3, 1.0, 0.0, 7.0]).unwrap()).unwrap();
    assert!((loss_dict(&rho_bad) - 0.1).abs() < 1e-15);
}

fn loss_dict_oracle(d: &Matrix) -> f64 {
    let (mut sc, mut rho, mut n_sc, mut n_rho) = (0.0, 0.0, 0.0, 0.0);
    for r in 0..d.rows() {
        for c in 0..d.cols() {
            let v = d[(r, c)];
            match r % 4 {
                0 => {
                    n_rho += 1.0;
                    rho += (0.0 - v).max(0.0);
                }
                1 | 2 => {
                    n_sc += 1.0;
                    sc += (-1.0 - v).max(0.0) + (v - 1.0).max(0.0);
                }
                _ => {}
            }
        }
    }
    2.0 / (3.0 * n_sc) * sc + 1.0 / (3.0 * n_rho) * rho
}

#[test]
fn loss_dict_matches_oracle_and_zero_iff_valid() {
    let mut rng = CounterRng::new(11);
    for _ in 0..50 {
        let d = Matrix::from_fn(12, 5, |_, _| rng.normal() * 1.5);
        let dict = PoseDictionary::new(d.clone()).unwrap();
        let got = loss_dict(&dict);
        assert!((got - loss_dict_oracle(&d)).abs() < 1e-12);
        let valid = (0..12).all(|r| {
            (0..5).all(|c| match r % 4 {
                0 => d[(r, c)] >= 0.0,
                1 | 2 => d[(r, c)].abs() <= 1.0,
                _ => true,
            })
        });
        assert_eq!(got == 0.0, valid);
    }
}

#[test]
fn reconstruct_examples() {
    let mut rng = CounterRng::new(5);
    let d = Matrix::from_fn(8, 3, |_, _| rng.normal());
    let dict = PoseDictionary::new(d.clone()).unwrap();
    let one_hot = AtomCoefficients::new(vec![0.0, 1.0, 0.0]).unwrap();
    assert_eq!(reconstruct(&one_hot, &dict).unwrap().values(), d.col(1).as_slice());

    let two = PoseDictionary::new(d.slice_cols_for_test(0, 2)).unwrap();
    let uniform = AtomCoefficients::new(vec![0.5, 0.5]).unwrap();
    let r = reconstruct(&uniform, &two).unwrap();
    for i in 0..8 {
        assert!((r.values()[i] - 0.5 * (d[(i, 0)] + d[(i, 1)])).abs() < 1e-15);
    }

    for _ in 0..20 {
        let raw: Vec<f64> = (0..3).map(|_| rng.uniform()).collect();
        let s: f64 = raw.iter().sum();
        let c = AtomCoefficients::new(raw.iter().map(|x| x / s).collect()).unwrap();
        let got = reconstruct(&c, &dict).unwrap();
        for i in 0..8 {
            let mut acc = 0.0;
            for j in 0..3 {
                acc += d[(i, j)] * c.values()[j];
            }
            assert!((got.values()[i] - acc).abs() < 1e-12);
        }
    }
    assert!(reconstruct(&AtomCoefficients::new(vec![1.0]).unwrap(), &dict).is_err());
}

trait SliceCols {
    fn slice_cols_for_test(&self, start: usize, n: usize) -> Matrix;
}

impl SliceCols for Matrix {
    fn slice_cols_for_test(&self, start: usize, n: usize) -> Matrix {
        Matrix::from_fn(self.rows(), n, |r, c| self[(r, start + c)])
    }
}

#[test]
fn coefficients_lie_on_simplex_and_reconstruction_in_hull() {
    let mut rng = CounterRng::new(3);
    let mut m = DictionaryModule::new(8, 4, &SMALL, 1).unwrap();
    let atoms = Matrix::from_fn(8, 4, |_, _| rng.normal() * 10.0);
    m.set_atoms(&PoseDictionary::new(atoms.clone()).unwrap()).unwrap();
    let h: Vec<_> = (0..16).map(|_| random_h(&mut rng, 8)).collect();
    for mode in [Mode::Train, Mode::Infer] {
        let cs = m.encode(&h, mode).unwrap();
        for c in &cs {
            assert!(c.values().iter().all(|&x| x >= 0.0));
            assert!((c.values().iter().sum::<f64>() - 1.0).abs() < 1e-9);
            let r = reconstruct(c, &m.dictionary()).unwrap();
            for i in 0..8 {
                let row = atoms.row(i);
                let lo = row.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                assert!(r.values()[i] >= lo - 1e-9 && r.values()[i] <= hi + 1e-9);
            }
        }
    }
}

#[test]
fn zero_head_gives_uniform_coefficients_and_duplicates_agree() {
    let mut rng = CounterRng::new(8);
    let mut m = DictionaryModule::new(8, 5, &SMALL, 2).unwrap();
    let h: Vec<_> = (0..6).map(|_| random_h(&mut rng, 8)).collect();
    let dup = vec![h[0].clone(), h[1].clone(), h[0].clone()];
    let c = m.encode(&dup, Mode::Infer).unwrap();
    assert_eq!(c[0], c[2]);
    m.zero_encoder_head();
    for c in m.encode(&h, Mode::Train).unwrap() {
        for &x in c.values() {
            assert!((x - 0.2).abs() < 1e-15);
        }
    }
    assert!(matches!(
        m.encode(&[CylPoseVector::new(vec![0.0; 4]).unwrap()], Mode::Infer),
        Err(crate::Error::ShapeMismatch { .. })
    ));
    assert!(matches!(m.encode(&[], Mode::Infer), Err(crate::Error::EmptyBatch)));
}

/// Direct evaluation of the mean squared reconstruction error.
fn loss_rec_oracle(m: &DictionaryModule, h: &[CylPoseVector]) -> f64 {
    let cs = m.encode(h, Mode::Train).unwrap();
    let d = m.dictionary();
    let dim = h[0].len();
    let mut total = 0.0;
    for (c, hv) in cs.iter().zip(h) {
        for i in 0..dim {
            let mut r = 0.0;
            for j in 0..d.k() {
                r += d.atoms()[(i, j)] * c.values()[j];
            }
            total += (r - hv.values()[i]).powi(2);
        }
    }
    total / (dim * h.len()) as f64
}

#[test]
fn loss_rec_examples() {
    let mut rng = CounterRng::new(21);
    // m = 2, k = 3, batch 4.
    let mut m = DictionaryModule::new(8, 3, &SMALL, 4).unwrap();
    m.set_atoms(&PoseDictionary::new(Matrix::from_fn(8, 3, |_, _| rng.normal())).unwrap()).unwrap();
    let h: Vec<_> = (0..4).map(|_| random_h(&mut rng, 8)).collect();
    let got = loss_rec(&h, &m, Mode::Train).unwrap();
    assert!((got - loss_rec_oracle(&m, &h)).abs() < 1e-12);
    assert!(matches!(loss_rec(&[], &m, Mode::Train), Err(crate::Error::EmptyBatch)));

    // Collapse every atom onto one pose: the reconstruction is that pose.
    let target = random_h(&mut rng, 8);
    let atoms = Matrix::from_fn(8, 3, |r, _| target.values()[r]);
    m.set_atoms(&PoseDictionary::new(atoms.clone()).unwrap()).unwrap();
    assert!(loss_rec(&[target.clone(), target.clone()], &m, Mode::Train).unwrap() < 1e-24);

    let delta = 0.7;
    let shifted = CylPoseVector::new(target.values().iter().map(|v| v + delta).collect()).unwrap();
    assert!((loss_rec(&[shifted], &m, Mode::Infer).unwrap() - delta * delta).abs() < 1e-12);
}

#[test]
fn init_dictionary_examples() {
    let mut rng = CounterRng::new(17);
    let h: Vec<_> = (0..30).map(|_| encode_pose(&random_pose(&mut rng)).unwrap()).collect();
    let d = init_dictionary(&h, 1, 0).unwrap();
    for i in 0..84 {
        let mean = h.iter().map(|v| v.values()[i]).sum::<f64>() / h.len() as f64;
        assert!((d.atoms()[(i, 0)] - mean).abs() < 1e-9);
    }
    let d = init_dictionary(&h, 6, 0).unwrap();
    assert_eq!(d.atoms().shape(), (84, 6));
    assert_eq!(loss_dict(&d), 0.0);
    assert!(matches!(init_dictionary(&[], 4, 0), Err(crate::Error::TooFewPoints { needed: 4, got: 0 })));

    // More atoms than poses: the poses themselves, then blends that stay valid.
    let d = init_dictionary(&h[..3], 5, 0).unwrap();
    assert_eq!(d.atoms().shape(), (84, 5));
    for (j, v) in h[..3].iter().enumerate() {
        assert!((0..84).all(|i| d.atoms()[(i, j)] == v.values()[i]));
    }
    assert_eq!(loss_dict(&d), 0.0);

    // Two clusters: atoms land near the cluster means.
    let a = random_h(&mut rng, 8);
    let b = CylPoseVector::new(a.values().iter().map(|v| v + 50.0).collect()).unwrap();
    let noisy = |base: &CylPoseVector, rng: &mut CounterRng| {
        CylPoseVector::new(base.values().iter().map(|v| v + 0.1 * rng.normal()).collect()).unwrap()
    };
    let pts: Vec<_> = (0..40).map(|i| if i % 2 == 0 { noisy(&a, &mut rng) } else { noisy(&b, &mut rng) }).collect();
    let d = init_dictionary(&pts, 2, 3).unwrap();
    for base in [&a, &b] {
        let best = (0..2)
            .map(|j| (0..8).map(|i| (d.atoms()[(i, j)] - base.values()[i]).powi(2)).sum::<f64>().sqrt())
            .fold(f64::INFINITY, f64::min);
        assert!(best < 0.5, "{best}");
    }
}

fn rec_program<'a, R: Reconstructor>(
    model: &R,
    store: &'a ParamStore,
    tape: &mut Tape<'a>,
    h: &Matrix,
    lambda: f64,
) -> crate::Result<crate::numerics::Var> {
    {
        let x = tape.input(h.clone());
        let rec = rec_loss_in(tape, model, store, &[x], Mode::Train, true);
        Ok(match model.regularizer_in(store, tape) {
            Some(d) if lambda != 0.0 => {
                let w = tape.scale(d, lambda);
                tape.add(rec, w)
            }
            _ => rec,
        })
    }
}

#[test]
fn dictionary_losses_pass_gradcheck() {
    let mut rng = CounterRng::new(9);
    let mut m = DictionaryModule::new(8, 3, &SMALL, 6).unwrap();
    // Atoms partly outside the valid box so the interval terms are active.
    let atoms = Matrix::from_fn(8, 3, |_, _| rng.normal() * 1.3 + 0.05);
    m.set_atoms(&PoseDictionary::new(atoms).unwrap()).unwrap();
    let h = Matrix::from_fn(5, 8, |_, _| rng.normal());
    let ids = m.store().trainable_ids();
    let snapshot = m.clone();
    let report = gradcheck(
        m.store_mut(),
        &ids,
        |tape, store| rec_program(&snapshot, store, tape, &h, 100.0),
        &GradcheckOptions::default(),
    )
    .unwrap();
    assert!(report.passed(), "{report:?}");
}
