//! Seeded generator of French-like emergency-room notes.
//!
//! Both classes share one note skeleton. What differs is the lexicon each
//! slot draws from: a handful of common clinical words per class, a long
//! Zipf-distributed tail of class-specific jargon, neutral filler and a small
//! amount of cross-class contamination. The tail is where the classes can only
//! be told apart by co-occurrence, which is what unlabeled text teaches.

use rand::distr::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{parse_icd10, ClinicalNote, NON_TRAUMA_LETTERS};

const SLOTS: usize = 6;

const TRAUMA_WORDS: [&[&str]; SLOTS] = [
    &[
        "chute", "AVP", "agression", "traumatisme", "chute mecanique", "accident de travail",
        "chute de sa hauteur", "morsure de chien", "rixe", "chute de velo", "accident de sport",
        "chute dans escaliers", "TC", "ecrasement", "coupure",
    ],
    &[
        "reception sur le poignet", "choc direct", "torsion de cheville", "impact genou",
        "pas de PC", "PC breve", "cinetique elevee", "casque porte", "point d'appui main",
        "coup de poing", "heurt contre porte",
    ],
    &[
        "hematome", "ecchymose", "deformation", "plaie", "dermabrasion", "impotence fonctionnelle",
        "tumefaction", "laceration", "contusion", "craquement",
    ],
    &[
        "radio poignet", "scanner cerebral", "echo FAST", "radio cheville", "bodyscanner",
        "TDM rachis", "radio genou", "radio gril costal",
    ],
    &[
        "fracture", "luxation", "fissure", "entorse", "arrachement osseux", "fracture deplacee",
        "pas de lesion osseuse", "plaie superficielle",
    ],
    &[
        "platre", "attelle", "suture", "immobilisation", "strapping", "avis ortho",
        "VAT a jour", "steri strip", "reduction", "cannes anglaises",
    ],
];

const NON_TRAUMA_WORDS: [&[&str]; SLOTS] = [
    &[
        "douleur thoracique", "dyspnee", "fievre", "douleur abdominale", "cephalees",
        "vomissements", "toux", "AEG", "vertiges", "palpitations", "diarrhee", "syncope",
        "confusion", "hyperglycemie", "asthenie",
    ],
    &[
        "depuis 3 jours", "progressive", "brutale", "constrictive", "irradiant au bras",
        "a l'effort", "frissons", "sueurs", "nausees", "toux productive", "post prandiale",
    ],
    &[
        "crepitants", "souffle", "defense", "sibilants", "tachycardie", "marbrures",
        "turgescence jugulaire", "murphy positif", "raideur de nuque", "ictere",
    ],
    &[
        "ECG", "troponine", "radio thorax", "hemocultures", "BU", "gaz du sang", "echo abdo",
        "D-dimeres",
    ],
    &[
        "pneumopathie", "SCA", "insuffisance cardiaque", "pyelonephrite", "cholecystite",
        "AVC", "embolie pulmonaire", "decompensation BPCO",
    ],
    &[
        "antibiotherapie", "aerosols", "hospit medecine", "avis cardio", "O2", "diuretiques",
        "remplissage", "anticoagulation", "insuline", "IPP",
    ],
];

const NEUTRAL: &[&str] = &[
    "douleur", "bilan", "surveillance", "antalgiques", "avis", "RAD", "a revoir", "EVA 6/10",
    "patient calme", "bon etat general", "apyretique", "RAS", "examen normal", "pas d'allergie",
    "consult MT", "paracetamol",
];

const INTROS: &[&str] = &[
    "Patient de", "Pt", "Pte", "Mme", "M.", "Homme de", "Femme de", "Patiente de",
];
const ARRIVALS: &[&str] = &[
    "adresse par MT", "amene par pompiers", "vient seul", "amene par SAMU", "accompagne famille",
    "vient de lui meme", "transfert EHPAD",
];
const HISTORY: &[&str] = &[
    "HTA", "diabete", "DNID", "tabac", "RAS", "dyslipidemie", "FA", "asthme", "obesite",
    "appendicectomie", "alcool", "sans ATCD",
];
const SLOT_PREFIX: [&str; SLOTS] = ["Motif:", "", "Examen:", "Bilan:", "Conclusion:", "CAT:"];

const SYLLABLES: &[&str] = &[
    "ka", "ri", "to", "ne", "bu", "sa", "mi", "lo", "pe", "du", "fa", "gi", "vo", "ze", "cha",
    "tra", "pli", "ro", "su", "na", "te", "li", "ma", "de", "bo", "gu", "pha", "ste", "cro",
];

const JARGON_PER_CLASS: usize = 240;
const ZIPF_EXPONENT: f64 = 1.0;

/// Slot-filling mixture: common class word, class jargon, neutral filler,
/// other-class word (remaining mass).
const P_COMMON: f64 = 0.30;
const P_JARGON: f64 = 0.38;
const P_NEUTRAL: f64 = 0.22;
const P_TYPO: f64 = 0.03;

struct Lexicon {
    jargon: [Vec<String>; 2],
    zipf_cdf: Vec<f64>,
}

impl Lexicon {
    fn build() -> Self {
        // Fixed seed: the jargon vocabulary is part of the generator, not of a corpus.
        let mut rng = ChaCha8Rng::seed_from_u64(0x6a61_7267_6f6e);
        let mut seen = std::collections::HashSet::new();
        let mut make = |rng: &mut ChaCha8Rng| loop {
            let n = rng.random_range(2..=3);
            let mut w: String = (0..n)
                .map(|_| SYLLABLES[rng.random_range(0..SYLLABLES.len())])
                .collect();
            if rng.random_bool(0.3) {
                w = w.to_uppercase();
            }
            if seen.insert(w.to_lowercase()) {
                return w;
            }
        };
        let mut jargon: [Vec<String>; 2] = [Vec::new(), Vec::new()];
        for _ in 0..JARGON_PER_CLASS {
            for class in &mut jargon {
                class.push(make(&mut rng));
            }
        }
        let weights: Vec<f64> = (0..JARGON_PER_CLASS)
            .map(|r| 1.0 / ((r + 1) as f64).powf(ZIPF_EXPONENT))
            .collect();
        let total: f64 = weights.iter().sum();
        let mut acc = 0.0;
        let zipf_cdf = weights
            .iter()
            .map(|w| {
                acc += w / total;
                acc
            })
            .collect();
        Self { jargon, zipf_cdf }
    }

    fn jargon(&self, class: usize, rng: &mut ChaCha8Rng) -> &str {
        let u: f64 = rng.random();
        let idx = self
            .zipf_cdf
            .partition_point(|&c| c < u)
            .min(JARGON_PER_CLASS - 1);
        &self.jargon[class][idx]
    }
}

fn pick<'a>(rng: &mut ChaCha8Rng, items: &[&'a str]) -> &'a str {
    items[rng.random_range(0..items.len())]
}

fn typo(word: &str, rng: &mut ChaCha8Rng) -> String {
    let mut chars: Vec<char> = word.chars().collect();
    if chars.len() < 3 {
        return word.to_string();
    }
    let i = rng.random_range(0..chars.len() - 1);
    if rng.random_bool(0.5) {
        chars.swap(i, i + 1);
    } else {
        chars.remove(i);
    }
    chars.into_iter().collect()
}

/// `class` 0 is trauma, 1 non-trauma.
fn slot_word(lex: &Lexicon, class: usize, slot: usize, rng: &mut ChaCha8Rng) -> String {
    let tables = [&TRAUMA_WORDS, &NON_TRAUMA_WORDS];
    let u: f64 = rng.random();
    let word = if u < P_COMMON {
        pick(rng, tables[class][slot]).to_string()
    } else if u < P_COMMON + P_JARGON {
        lex.jargon(class, rng).to_string()
    } else if u < P_COMMON + P_JARGON + P_NEUTRAL {
        pick(rng, NEUTRAL).to_string()
    } else if rng.random_bool(0.5) {
        pick(rng, tables[1 - class][slot]).to_string()
    } else {
        lex.jargon(1 - class, rng).to_string()
    };
    if rng.random_bool(P_TYPO) {
        typo(&word, rng)
    } else {
        word
    }
}

fn note_text(lex: &Lexicon, trauma: bool, rng: &mut ChaCha8Rng) -> String {
    let class = usize::from(!trauma);
    let mut parts: Vec<String> = Vec::with_capacity(12);
    let age = rng.random_range(16..95);
    parts.push(format!("{} {} ans, {}.", pick(rng, INTROS), age, pick(rng, ARRIVALS)));
    let mut slots: Vec<String> = (0..SLOTS)
        .map(|s| {
            let mut w = slot_word(lex, class, s, rng);
            if rng.random_bool(0.35) {
                w.push(' ');
                w.push_str(&slot_word(lex, class, s, rng));
            }
            w
        })
        .collect();
    // history sits between motif and story
    let hist = format!("ATCD: {}.", pick(rng, HISTORY));
    for (s, w) in slots.iter_mut().enumerate() {
        let prefix = SLOT_PREFIX[s];
        let sentence = if prefix.is_empty() {
            format!("{w}.")
        } else {
            format!("{prefix} {w}.")
        };
        parts.push(sentence);
        if s == 0 {
            parts.push(hist.clone());
        }
        if s == 2 {
            let sys = rng.random_range(95..175);
            let dia = rng.random_range(50..100);
            let fc = rng.random_range(55..125);
            let temp = 36.0 + f64::from(rng.random_range(0..35u8)) / 10.0;
            parts.push(format!("TA {sys}/{dia} FC {fc} T {temp:.1}."));
        }
    }
    parts.join(" ")
}

fn code_for(trauma: bool, rng: &mut ChaCha8Rng) -> String {
    let digit = Uniform::new(0u32, 10).unwrap();
    let sub = digit.sample(rng);
    if trauma {
        let u: f64 = rng.random();
        if u < 0.75 {
            format!("S{:02}.{sub}", rng.random_range(0..100))
        } else if u < 0.9 {
            format!("T{:02}", rng.random_range(1..=35))
        } else {
            format!("V{:02}.{sub}", rng.random_range(1..100))
        }
    } else {
        let letter = NON_TRAUMA_LETTERS[rng.random_range(0..NON_TRAUMA_LETTERS.len())];
        format!("{letter}{:02}.{sub}", rng.random_range(0..100))
    }
}

/// Generates `n` labeled notes, a `class_balance` fraction of them trauma in
/// expectation. Pure function of its arguments.
pub fn generate_synthetic_corpus(seed: u64, n: usize, class_balance: f64) -> Vec<ClinicalNote> {
    let lex = Lexicon::build();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let trauma = rng.random_bool(class_balance.clamp(0.0, 1.0));
            let text = note_text(&lex, trauma, &mut rng);
            let code = parse_icd10(&code_for(trauma, &mut rng)).expect("generated code is valid");
            ClinicalNote::new(format!("syn-{seed}-{i:06}"), text, Some(code))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::TraumaLabel;

    #[test]
    fn deterministic_in_seed() {
        assert_eq!(
            generate_synthetic_corpus(1, 10, 0.5),
            generate_synthetic_corpus(1, 10, 0.5)
        );
        assert_ne!(
            generate_synthetic_corpus(1, 10, 0.5),
            generate_synthetic_corpus(2, 10, 0.5)
        );
    }

    #[test]
    fn every_note_is_trauma_or_nontrauma() {
        for n in generate_synthetic_corpus(5, 500, 0.5) {
            assert!(matches!(n.label, Some(TraumaLabel::Trauma | TraumaLabel::NonTrauma)));
            assert!(!n.text.is_empty());
            assert!(n.text.is_ascii());
        }
    }

    #[test]
    fn class_balance_is_respected() {
        let corpus = generate_synthetic_corpus(1, 10_000, 0.33);
        let trauma = corpus
            .iter()
            .filter(|n| n.label == Some(TraumaLabel::Trauma))
            .count() as f64;
        assert!((trauma / 10_000.0 - 0.33).abs() < 0.02);
    }

    #[test]
    fn jargon_vocabularies_are_disjoint() {
        let lex = Lexicon::build();
        let a: std::collections::HashSet<_> = lex.jargon[0].iter().map(|w| w.to_lowercase()).collect();
        assert!(lex.jargon[1].iter().all(|w| !a.contains(&w.to_lowercase())));
    }
}
