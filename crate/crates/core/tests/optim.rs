use hessnet_core::molecule::Molecule;
use hessnet_core::optim::{optimize, BfgsInit, HessianSource, Method, OptConfig};
use hessnet_core::oracles::{tetrahedron, PotentialSpec};
use hessnet_core::potential::OraclePotential;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn noised(x: &[f64], sigma: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = Normal::new(0.0, sigma).unwrap();
    x.iter().map(|v| v + n.sample(&mut rng)).collect()
}

fn lj4() -> (OraclePotential, Vec<f64>) {
    let spec = PotentialSpec::LennardJones { epsilon: 1.0, sigma: 3.0 };
    let mol = tetrahedron(18, spec.equilibrium_distance().unwrap()).unwrap();
    let x = mol.flat_positions();
    (OraclePotential::new(spec, Some(mol)).unwrap(), x)
}

#[test]
fn harmonic_trimer_relaxes_in_five_steps() {
    let h = 0.5 * 3f64.sqrt();
    let mol = Molecule::new(vec![8, 1, 1], vec![[0.0; 3], [1.0, 0.0, 0.0], [0.5, h, 0.0]]).unwrap();
    let x = mol.flat_positions();
    let p = OraclePotential::new(PotentialSpec::HarmonicBond { k: 10.0, r0: 1.0 }, Some(mol)).unwrap();
    for seed in 0..10 {
        let r = optimize(&p, &noised(&x, 0.05, seed), &OptConfig::default()).unwrap();
        assert!(r.converged && r.steps <= 5, "seed {seed}: {} steps", r.steps);
    }
}

#[test]
fn lj4_rfo_never_slower_than_steepest_descent() {
    let (p, x) = lj4();
    let sd = OptConfig {
        method: Method::SteepestDescent,
        ..Default::default()
    };
    for seed in 0..20 {
        let x0 = noised(&x, 0.3, 700 + seed);
        let rfo = optimize(&p, &x0, &OptConfig::default()).unwrap();
        let base = optimize(&p, &x0, &sd).unwrap();
        assert!(rfo.converged && base.converged);
        assert!(rfo.steps <= base.steps, "seed {seed}: rfo {} sd {}", rfo.steps, base.steps);
    }
}

#[test]
fn bfgs_from_indefinite_start_converges() {
    let (p, x) = lj4();
    let cfg = OptConfig {
        hessian: HessianSource::Bfgs(BfgsInit::Oracle),
        ..Default::default()
    };
    for seed in 0..10 {
        let r = optimize(&p, &noised(&x, 0.3, 700 + seed), &cfg).unwrap();
        assert!(r.converged, "seed {seed}");
    }
}
