use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use mcmcnet::datagen::{generate_dataset, load_dataset, save_dataset, PhantomMix};
use mcmcnet::fem::{Measurement, ProblemKind};
use mcmcnet::mesh::TriMesh;
use mcmcnet::problem::{Problem, ProblemConfig};
use mcmcnet::surrogate::{load_model, save_model, Architecture, SurrogateNet};

fn small_problem() -> Problem {
    let mut cfg = ProblemConfig::new(ProblemKind::Eit);
    cfg.refinement = 2;
    Problem::new(cfg).unwrap()
}

#[test]
fn generated_artifacts_survive_disk() {
    let dir = tempfile::tempdir().unwrap();
    let problem = small_problem();

    let mut text = Vec::new();
    problem.mesh.write_text(&mut text).unwrap();
    let mesh = TriMesh::read_text(text.as_slice()).unwrap();
    assert_eq!(mesh.to_text(), problem.mesh.to_text());

    let (ds, _) = generate_dataset(&problem, 6, &PhantomMix::default_for(ProblemKind::Eit), 2).unwrap();
    let path = dir.path().join("ds.bin");
    save_dataset(&ds, &path).unwrap();
    assert_eq!(load_dataset(&path).unwrap(), ds);

    let m: Measurement = ds.measurement(0);
    let mut csv = Vec::new();
    m.write_csv(&mut csv).unwrap();
    assert_eq!(Measurement::read_csv(csv.as_slice()).unwrap(), m);

    let net = SurrogateNet::he_init(Architecture::new(problem.input_dim(), 4), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let path = dir.path().join("model.bin");
    save_model(&net, &path).unwrap();
    let back = load_model(&path).unwrap();
    let x = &ds.inputs[0];
    assert_eq!(net.forward(x).unwrap(), back.forward(x).unwrap());
}
