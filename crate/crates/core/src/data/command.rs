//! Command templates, the closed vocabulary, and tokenization.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;

use super::{Action, Direction, SceneObject};
use crate::error::{Error, Result};
use crate::rng::Rng;

pub const UNK: usize = 0;
pub const PAD: usize = 1;

const PARK: [&str; 3] = ["park next to the", "stop beside the", "pull over near the"];
const FOLLOW: [&str; 3] = ["follow the", "drive behind the", "stay behind the"];
const SPEED: [&str; 3] = ["slow down before the", "go slow before the", "brake before the"];
const MAINTAIN: [&str; 3] = ["continue straight", "keep going straight", "stay in this lane"];

/// Words of every template, in vocabulary order (after `<unk>` and `<pad>`).
const LEXICON: [&str; 46] = [
    "park", "next", "to", "the", "stop", "beside", "pull", "over", "near", "follow", "drive",
    "behind", "stay", "turn", "take", "a", "here", "left", "right", "continue", "straight", "keep",
    "going", "in", "this", "lane", "slow", "down", "before", "go", "brake", "change", "switch",
    "move", "into", "red", "yellow", "white", "black", "green", "blue", "car", "truck", "van",
    "bin", "person",
];

/// Fills template `template` (0..3) of `action`.
pub fn synthesize_command(
    action: Action,
    referent: Option<&SceneObject>,
    direction: Option<Direction>,
    template: usize,
) -> Result<String> {
    let obj = || {
        referent
            .map(|o| format!("{} {}", o.color.name(), o.class.name()))
            .ok_or_else(|| Error::Contract(format!("{action:?} needs a referent")))
    };
    let dir = || {
        direction
            .map(Direction::name)
            .ok_or_else(|| Error::Contract(format!("{action:?} needs a direction")))
    };
    let t = template % 3;
    Ok(match action {
        Action::Park => format!("{} {}", PARK[t], obj()?),
        Action::Follow => format!("{} {}", FOLLOW[t], obj()?),
        Action::Speed => format!("{} {}", SPEED[t], obj()?),
        Action::Maintain => MAINTAIN[t].to_string(),
        Action::Turn => match t {
            0 => format!("turn {}", dir()?),
            1 => format!("take a {} turn", dir()?),
            _ => format!("turn {} here", dir()?),
        },
        Action::LaneChange => {
            let verb = ["change to", "switch to", "move into"][t];
            format!("{verb} the {} lane", dir()?)
        }
    })
}

const FILLERS: [&str; 5] = [
    "when it is safe to do so",
    "as soon as the traffic allows",
    "because we are running a little late today",
    "and please be careful with the pedestrians around here",
    "if the road ahead looks clear enough",
];

/// Pads a command with distractor clauses until its word count reaches a
/// randomly chosen bucket (under 10, 10 to 19, 20 or more words).
pub fn verbose(command: &str, rng: &mut Rng) -> String {
    let lo = *[0usize, 10, 20].choose(rng).unwrap();
    let mut out = command.to_string();
    let mut fillers = FILLERS.to_vec();
    fillers.shuffle(rng);
    for f in fillers {
        if word_count(&out) >= lo {
            break;
        }
        let added = word_count(&out) + word_count(f);
        if lo < 10 && added >= 10 || lo < 20 && added >= 20 {
            continue;
        }
        if rng.gen_bool(0.5) {
            out = format!("{f} {out}");
        } else {
            out = format!("{out} {f}");
        }
    }
    out
}

pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Closed vocabulary; the id of a token is its line index in `vocab.txt`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
}

impl Vocab {
    /// The vocabulary of the template language.
    pub fn standard() -> Self {
        let mut tokens = vec!["<unk>".to_string(), "<pad>".to_string()];
        tokens.extend(LEXICON.iter().map(|s| s.to_string()));
        Vocab { tokens }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, word: &str) -> usize {
        self.tokens.iter().position(|t| t == word).unwrap_or(UNK)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        std::fs::write(path, s)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let tokens: Vec<String> = std::fs::read_to_string(path)?
            .lines()
            .map(str::to_string)
            .collect();
        if tokens.len() < 2 || tokens[UNK] != "<unk>" || tokens[PAD] != "<pad>" {
            return Err(Error::Format(format!(
                "{}: vocabulary must start with <unk> and <pad>",
                path.display()
            )));
        }
        Ok(Vocab { tokens })
    }
}

/// Token ids padded with PAD to `max_len`, and the number of real tokens.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Tokens {
    pub ids: Vec<usize>,
    pub valid_len: usize,
}

/// Lowercases, splits on whitespace, maps through `vocab` (UNK for unknown
/// words), truncates to `max_len` and pads.
pub fn tokenize(text: &str, vocab: &Vocab, max_len: usize) -> Tokens {
    let mut ids: Vec<usize> = text
        .to_lowercase()
        .split_whitespace()
        .take(max_len)
        .map(|w| vocab.id(w))
        .collect();
    let valid_len = ids.len();
    ids.resize(max_len, PAD);
    Tokens { ids, valid_len }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Color, ObjectClass, Side};
    use crate::planner::Rect;

    fn red_car() -> SceneObject {
        SceneObject {
            class: ObjectClass::Car,
            color: Color::Red,
            side: Side::Right,
            slot: 1,
            footprint: Rect::new(0.0, 1.0, 0.0, 1.0),
        }
    }

    #[test]
    fn template_fill() {
        let c = synthesize_command(Action::Park, Some(&red_car()), None, 0).unwrap();
        assert_eq!(c, "park next to the red car");
        assert!(synthesize_command(Action::Follow, None, None, 0).is_err());
    }

    #[test]
    fn every_template_is_short_and_in_vocab() {
        let vocab = Vocab::standard();
        assert_eq!(vocab.len(), 48);
        let obj = red_car();
        for action in Action::ALL {
            for t in 0..3 {
                for d in [Direction::Left, Direction::Right] {
                    let c = synthesize_command(action, Some(&obj), Some(d), t).unwrap();
                    let tok = tokenize(&c, &vocab, 12);
                    assert!(tok.valid_len <= 12 && word_count(&c) <= 12, "{c}");
                    assert!(tok.ids[..tok.valid_len].iter().all(|&i| i != UNK), "{c}");
                }
            }
        }
    }

    #[test]
    fn tokenize_contract() {
        let vocab = Vocab::standard();
        let t = tokenize("Park next to the red car", &vocab, 12);
        assert_eq!(t.valid_len, 6);
        assert_eq!(t.ids.len(), 12);
        assert!(t.ids[..6].iter().all(|&i| i != UNK));
        assert!(t.ids[6..].iter().all(|&i| i == PAD));
        assert_eq!(tokenize("zebra", &vocab, 4).ids[0], UNK);
        let lower = "follow the red car";
        assert_eq!(tokenize(lower, &vocab, 12), tokenize(&lower.to_lowercase(), &vocab, 12));
        assert_eq!(tokenize("a b c d e f", &vocab, 3).valid_len, 3);
    }

    #[test]
    fn vocab_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("vocab.txt");
        Vocab::standard().save(&p).unwrap();
        assert_eq!(Vocab::load(&p).unwrap(), Vocab::standard());
    }

    #[test]
    fn verbose_commands_hit_all_length_buckets() {
        let mut rng = crate::rng::rng(3);
        let mut seen = [false; 3];
        for _ in 0..200 {
            let n = word_count(&verbose("turn left", &mut rng));
            seen[(n / 10).min(2)] = true;
        }
        assert_eq!(seen, [true; 3]);
    }
}
