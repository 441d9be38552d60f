//! End-to-end synthesis: search, refine, package as a database entry and
//! lower through the gate pipeline.

use eoq_core::encoding::{GaqqMap, Orientation};
use eoq_core::gates::{
    clifford_unitary, lower_circuit, pulses_to_unitary, Circuit, CircuitOp, DdPolicy, Layout,
    SequenceDb, TripleSite,
};
use eoq_core::linalg::CMat;
use eoq_core::spin::FlatSeq;
use eoq_core::synth::{
    grape_refine, remc_search, ril_spec, sequence_objective, single_qubit_spec, GrapeControl,
};

fn seq_unitary(seq: &FlatSeq) -> CMat {
    let steps: Vec<Vec<((usize, usize), f64)>> = seq
        .rows
        .iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .filter(|(_, &th)| th != 0.0)
                .map(|(a, &th)| (seq.axes[a].spins, th))
                .collect()
        })
        .collect();
    pulses_to_unitary(seq.n_spins, &steps).unwrap()
}

/// Synthesize a Hadamard from scratch, refine it, store it under a name and
/// lower a circuit that calls it; the lowered schedule must implement the
/// gate it was stored as.
#[test]
fn synthesized_hadamard_flows_into_the_gate_pipeline() {
    let target = clifford_unitary(1).unwrap();
    let spec = single_qubit_spec(target.clone(), Orientation::Zn, 5);
    let mut found = None;
    for seed in 1..=3 {
        let result = remc_search(&spec, 6, None, 40_000, seed).unwrap();
        if result.objective < 1e-3 {
            found = Some(result);
            break;
        }
    }
    let rough = found.expect("no seed reached the pre-refinement target");
    let refined = grape_refine(&rough.rows, &spec, &GrapeControl::default()).unwrap();
    assert!(refined.objective < 1e-9, "objective {}", refined.objective);
    assert!(!refined.stalled);

    // The reported numbers must survive independent re-evaluation.
    let replay = sequence_objective(&spec, &refined.rows).unwrap();
    assert!((replay - refined.objective).abs() < 1e-9);

    let entry = refined.to_seq_entry("h", &spec).unwrap();
    let mut db = SequenceDb::new();
    let report = db.insert(entry).unwrap();
    assert!(report.fidelity > 1.0 - 1e-9);

    let layout = Layout::linear(vec![TripleSite::new("q", 0, Orientation::Zn)], 25.0).unwrap();
    let mut circuit = Circuit::new(["q"]);
    circuit.push(CircuitOp::Gate {
        name: "h".into(),
        qubits: vec!["q".into()],
    });
    let seq = lower_circuit(&circuit, &layout, &db, DdPolicy::none()).unwrap();
    let map = GaqqMap::from_unitary(&seq_unitary(&seq), &[Orientation::Zn]).unwrap();
    let fidelity = map.encoded_process_fidelity(&target).unwrap();
    assert!(fidelity > 1.0 - 1e-9, "lowered fidelity {fidelity}");
}

/// A short reset-if-leaked search must descend, keep the grid legal and
/// report both contract clauses.
#[test]
fn ril_search_descends_and_reports_both_clauses() {
    let spec = ril_spec(12);
    let result = remc_search(&spec, 6, None, 30_000, 5).unwrap();
    assert!(
        result.objective < result.trace[0],
        "no progress: {} → {}",
        result.trace[0],
        result.objective
    );
    let report = result.ril.expect("reset-if-leaked runs carry clause scores");
    assert!(report.identity_fidelity >= 0.0 && report.identity_fidelity <= 1.0 + 1e-12);
    assert!(report.unleak_success >= 0.0 && report.unleak_success <= 1.0 + 1e-12);
    assert!(result.fidelity <= report.identity_fidelity.min(report.unleak_success) + 1e-12);
    let replay = sequence_objective(&spec, &result.rows).unwrap();
    assert!((replay - result.objective).abs() < 1e-12);
}
