use pneumoscan::aggregation::{
    build_contamination_matrix, default_decision, majority_vote, presume_covid, Strategy as Decided,
};
use pneumoscan::classifier::{ClassLabel, ClassProbs};
use proptest::prelude::*;

const LABELS: [ClassLabel; 3] = [ClassLabel::Bacteria, ClassLabel::Normal, ClassLabel::Virus];

/// Count argmax; ties to the larger summed probability; then Virus > Bacteria > Normal.
fn oracle(cells: &[ClassProbs]) -> ClassLabel {
    let label_of = |p: &ClassProbs| {
        let a = p.as_array();
        let top = a.iter().cloned().fold(f64::MIN, f64::max);
        [ClassLabel::Virus, ClassLabel::Bacteria, ClassLabel::Normal]
            .into_iter()
            .find(|l| a[l.index()] == top)
            .unwrap()
    };
    let count = |l: ClassLabel| cells.iter().filter(|c| label_of(c) == l).count();
    let mass = |l: ClassLabel| cells.iter().map(|c| c.get(l)).sum::<f64>();
    let top = LABELS.iter().map(|&l| count(l)).max().unwrap();
    let tied: Vec<_> = LABELS.into_iter().filter(|&l| count(l) == top).collect();
    let best_mass = tied.iter().map(|&l| mass(l)).fold(f64::MIN, f64::max);
    let tied: Vec<_> = tied.into_iter().filter(|&l| mass(l) >= best_mass - 1e-9).collect();
    [ClassLabel::Virus, ClassLabel::Bacteria, ClassLabel::Normal]
        .into_iter()
        .find(|l| tied.contains(l))
        .unwrap()
}

fn assignment(mut code: usize) -> Vec<ClassLabel> {
    (0..9)
        .map(|_| {
            let l = LABELS[code % 3];
            code /= 3;
            l
        })
        .collect()
}

#[test]
fn exhaustive_uniform_confidence() {
    for code in 0..3usize.pow(9) {
        let cells: Vec<_> = assignment(code).into_iter().map(|l| ClassProbs::peaked(l, 0.8)).collect();
        let cm = build_contamination_matrix(&cells, 3, 3, "g").unwrap();
        let d = majority_vote(&cm);
        assert_eq!(d.label, oracle(&cells), "assignment {code}");
        assert_eq!(d.pneumonia, d.label != ClassLabel::Normal);
        assert_eq!(cm.virus_count, cells.iter().filter(|c| c.argmax() == ClassLabel::Virus).count());
    }
}

#[test]
fn exhaustive_varied_confidence() {
    // per-cell confidence drawn from a fixed cycle so equal counts usually carry unequal mass
    let conf = [0.41, 0.93, 0.55, 0.67, 0.99, 0.48, 0.72, 0.86, 0.6];
    for code in 0..3usize.pow(9) {
        let cells: Vec<_> = assignment(code)
            .into_iter()
            .enumerate()
            .map(|(i, l)| ClassProbs::peaked(l, conf[(i + code) % 9]))
            .collect();
        let cm = build_contamination_matrix(&cells, 3, 3, "g").unwrap();
        assert_eq!(majority_vote(&cm).label, oracle(&cells), "assignment {code}");
    }
}

fn arb_probs() -> impl Strategy<Value = ClassProbs> {
    prop::array::uniform3(0.001f64..1.0).prop_map(|a| {
        let s: f64 = a.iter().sum();
        ClassProbs::renormalized(a.map(|v| v / s), 1e-6).unwrap()
    })
}

proptest! {
    #[test]
    fn random_grids_match_oracle(cells in prop::collection::vec(arb_probs(), 9)) {
        let cm = build_contamination_matrix(&cells, 3, 3, "r").unwrap();
        prop_assert_eq!(majority_vote(&cm).label, oracle(&cells));
    }

    #[test]
    fn permutation_invariance(cells in prop::collection::vec(arb_probs(), 9), perm in Just((0..9).collect::<Vec<usize>>()).prop_shuffle()) {
        let a = build_contamination_matrix(&cells, 3, 3, "r").unwrap();
        let shuffled: Vec<_> = perm.iter().map(|&i| cells[i]).collect();
        let b = build_contamination_matrix(&shuffled, 3, 3, "r").unwrap();
        prop_assert_eq!(a.virus_count, b.virus_count);
        prop_assert_eq!(majority_vote(&a).label, majority_vote(&b).label);
    }

    #[test]
    fn scaling_free_argmax(cells in prop::collection::vec(arb_probs(), 9), c in 0.01f64..100.0) {
        let a = build_contamination_matrix(&cells, 3, 3, "r").unwrap();
        let scaled: Vec<_> = cells
            .iter()
            .map(|p| {
                let s = p.as_array().map(|v| v * c);
                let t: f64 = s.iter().sum();
                ClassProbs::renormalized(s.map(|v| v / t), 1e-6).unwrap()
            })
            .collect();
        let b = build_contamination_matrix(&scaled, 3, 3, "r").unwrap();
        prop_assert_eq!(a.labels().collect::<Vec<_>>(), b.labels().collect::<Vec<_>>());
        prop_assert_eq!(a.virus_count, b.virus_count);
        prop_assert_eq!(majority_vote(&a), majority_vote(&b));
        prop_assert_eq!(default_decision(None, Some(&a)).unwrap(), default_decision(None, Some(&b)).unwrap());
    }

    #[test]
    fn pneumonia_flag_is_definitional(cells in prop::collection::vec(arb_probs(), 9), whole in arb_probs()) {
        let cm = build_contamination_matrix(&cells, 3, 3, "r").unwrap();
        for d in [majority_vote(&cm), default_decision(Some(&whole), Some(&cm)).unwrap(), default_decision(None, Some(&cm)).unwrap()] {
            prop_assert_eq!(d.pneumonia, matches!(d.label, ClassLabel::Bacteria | ClassLabel::Virus));
            prop_assert_eq!(presume_covid(&d, true), d.label == ClassLabel::Virus);
            prop_assert!(!presume_covid(&d, false));
        }
    }
}

#[test]
fn default_prefers_whole_image() {
    let cells = vec![ClassProbs::peaked(ClassLabel::Virus, 0.9); 9];
    let cm = build_contamination_matrix(&cells, 3, 3, "w").unwrap();
    let whole = ClassProbs::peaked(ClassLabel::Normal, 0.9);
    let d = default_decision(Some(&whole), Some(&cm)).unwrap();
    assert_eq!((d.label, d.strategy), (ClassLabel::Normal, Decided::Default));
    assert_eq!(default_decision(None, Some(&cm)).unwrap().label, ClassLabel::Virus);
    assert!(default_decision(None, None).is_err());
    assert!(build_contamination_matrix(&cells, 2, 4, "w").is_err());
}

#[test]
fn export_shape_and_count() {
    let mut cells = vec![ClassProbs::peaked(ClassLabel::Normal, 0.6); 6];
    cells[4] = ClassProbs::peaked(ClassLabel::Virus, 0.6);
    let cm = build_contamination_matrix(&cells, 2, 3, "e").unwrap();
    let json = serde_json::to_value(cm.export()).unwrap();
    assert_eq!(json["N"], 1);
    assert_eq!(json["labels"][1][1], "virus");
    assert_eq!(json["labels"].as_array().unwrap().len(), 2);
}
