//! Randomized parse/print round-trip over the full grammar: for any
//! generated source, `parse(print(parse(src))) == parse(src)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use faircc_core::lang::{parse, print_program};

struct Gen {
    rng: ChaCha8Rng,
    var_count: usize,
    constraint_count: usize,
    proc_count: usize,
    ring: &'static str,
}

impl Gen {
    fn level(&mut self) -> String {
        match self.ring {
            "boolean" => if self.rng.gen_bool(0.5) {
                "true"
            } else {
                "false"
            }
            .to_string(),
            "weighted" => ["0", "1", "3/2", "7", "inf"][self.rng.gen_range(0..5)].to_string(),
            _ => ["0", "1/4", "1/2", "3/4", "1"][self.rng.gen_range(0..5)].to_string(),
        }
    }

    fn arrow(&mut self) -> String {
        match self.rng.gen_range(0..4) {
            0 | 1 => " -> ".to_string(),
            2 => format!(" ->[{}] ", self.level()),
            _ => format!(" ->{{g{}}} ", self.rng.gen_range(0..self.constraint_count)),
        }
    }

    fn var(&mut self) -> String {
        format!("v{}", self.rng.gen_range(0..self.var_count))
    }

    /// One prefix-level agent; `depth` bounds nesting.
    fn prefix(&mut self, depth: usize) -> String {
        let roll = if depth == 0 {
            self.rng.gen_range(0..2)
        } else {
            self.rng.gen_range(0..8)
        };
        match roll {
            0 => "success".to_string(),
            1 => {
                if self.proc_count > 0 && self.rng.gen_bool(0.4) {
                    format!(
                        "p{}({})",
                        self.rng.gen_range(0..self.proc_count),
                        self.var()
                    )
                } else {
                    "fail".to_string()
                }
            }
            2 | 3 => format!(
                "tell(g{}){}{}",
                self.rng.gen_range(0..self.constraint_count),
                self.arrow(),
                self.prefix(depth - 1)
            ),
            4 => format!(
                "ask(g{}){}{}",
                self.rng.gen_range(0..self.constraint_count),
                self.arrow(),
                self.prefix(depth - 1)
            ),
            5 => format!("par({}, {})", self.agent(depth - 1), self.agent(depth - 1)),
            6 => format!("exists {}. {}", self.var(), self.prefix(depth - 1)),
            _ => format!("({})", self.agent(depth - 1)),
        }
    }

    fn choice(&mut self, depth: usize) -> String {
        if depth > 0 && self.rng.gen_bool(0.25) {
            let n = self.rng.gen_range(2..=3);
            let branches: Vec<String> = (0..n)
                .map(|_| {
                    format!(
                        "ask(g{}){}{}",
                        self.rng.gen_range(0..self.constraint_count),
                        self.arrow(),
                        self.prefix(depth - 1)
                    )
                })
                .collect();
            branches.join(" + ")
        } else {
            self.prefix(depth)
        }
    }

    fn agent(&mut self, depth: usize) -> String {
        let mut out = self.choice(depth);
        if depth > 0 {
            for _ in 0..self.rng.gen_range(0..=2) {
                out = format!("{out} || {}", self.choice(depth - 1));
            }
        }
        out
    }

    fn program(&mut self) -> String {
        let domain_size = self.rng.gen_range(1..=3);
        let mut src = format!("semiring {};\ndomain {{ ", self.ring);
        src.push_str(
            &(0..domain_size)
                .map(|i| format!("d{i}"))
                .collect::<Vec<_>>()
                .join(", "),
        );
        src.push_str(" };\nvars { ");
        src.push_str(
            &(0..self.var_count)
                .map(|i| format!("v{i}"))
                .collect::<Vec<_>>()
                .join(", "),
        );
        src.push_str(" };\n");
        for c in 0..self.constraint_count {
            // g0 is always on (v0) so procedure bodies can reference it.
            let arity = if c == 0 {
                1
            } else {
                self.rng.gen_range(1..=2.min(self.var_count))
            };
            let start = if c == 0 {
                0
            } else {
                self.rng.gen_range(0..=self.var_count - arity)
            };
            let scope: Vec<String> = (start..start + arity).map(|v| format!("v{v}")).collect();
            let level = self.level();
            src.push_str(&format!(
                "constraint g{c} on ({}) default {level} {{ }};\n",
                scope.join(", ")
            ));
        }
        // Procedure bodies may only use their own parameter, so they are
        // generated over a dedicated single-variable generator.
        for p in 0..self.proc_count {
            let mut body_gen = Gen {
                rng: ChaCha8Rng::seed_from_u64(self.rng.gen()),
                var_count: 1,
                constraint_count: 1,
                proc_count: 0,
                ring: self.ring,
            };
            let body = body_gen.agent(2);
            src.push_str(&format!("proc p{p}(v0) = {body};\n"));
        }
        let main = self.agent(3);
        src.push_str(&format!("init {main}\n"));
        src
    }
}

#[test]
fn random_programs_round_trip() {
    for case in 0..300u64 {
        let mut g = Gen {
            rng: ChaCha8Rng::seed_from_u64(0x707 + case),
            var_count: 3,
            constraint_count: 4,
            proc_count: (case % 3) as usize,
            ring: ["fuzzy", "boolean", "weighted"][(case % 3) as usize],
        };
        let src = g.program();
        let first = match parse(&src) {
            Ok(p) => p,
            Err(e) => panic!("case {case}: generated source failed to parse: {e}\n{src}"),
        };
        let printed = print_program(&first);
        let second = parse(&printed).unwrap_or_else(|e| {
            panic!("case {case}: printed source failed to parse: {e}\n--- original ---\n{src}\n--- printed ---\n{printed}")
        });
        assert_eq!(
            first, second,
            "case {case}:\n--- original ---\n{src}\n--- printed ---\n{printed}"
        );
    }
}
