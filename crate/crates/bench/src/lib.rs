//! Fixtures shared by the benchmarks.

use pbf_core::problems::StateConstrained;
use pbf_core::solver::{assemble_kkt, KktForm, KktSystem};
use pbf_core::{transcribe, KktState, Mesh, Method, TranscribedNlp};

pub static X2: StateConstrained = StateConstrained;

/// PBF5 on X2 with `k` elements, `q = 10`.
pub fn x2_pbf(k: usize) -> TranscribedNlp<'static> {
    let mesh = Mesh::uniform(0.0, 1.0, k).expect("mesh");
    transcribe(&X2, &mesh, Method::Pbf, 5, 10, 1e-10, 1e-10).expect("transcription")
}

/// Newton system at the default initial guess.
pub fn x2_kkt(k: usize) -> KktSystem {
    let nlp = x2_pbf(k);
    let x = nlp.initial_guess();
    let s = nlp.slacks(&x);
    let state = KktState {
        z: nlp.barrier_weights().component_div(&s) * nlp.tau(),
        x: x.into(),
        y: vec![0.0; nlp.m_e()].into(),
        omega: nlp.omega(),
        tau: nlp.tau(),
    };
    assemble_kkt(&nlp, &state, KktForm::Augmented).expect("assembly")
}
