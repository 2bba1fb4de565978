//! Confusion matrices with every metric worked out by hand as a fraction.

use evdl_core::decision::Confusion;
use evdl_core::Label;
use num_rational::Ratio;

pub type Q = Ratio<i64>;

pub fn q(n: i64, d: i64) -> Q {
    Ratio::new(n, d)
}

pub fn labels_for(c: &Confusion) -> (Vec<Label>, Vec<Label>) {
    use Label::*;
    let mut pred = Vec::new();
    let mut gold = Vec::new();
    for (n, p, g) in [(c.tp, Private, Private), (c.fp, Private, Public), (c.fn_, Public, Private), (c.tn, Public, Public)] {
        pred.extend(std::iter::repeat_n(p, n));
        gold.extend(std::iter::repeat_n(g, n));
    }
    (pred, gold)
}

pub struct Hand {
    pub counts: [usize; 4],
    pub accuracy: Q,
    pub private: [Q; 3],
    pub public: [Q; 3],
    pub macro_avg: [Q; 3],
}

/// Order inside each triple: precision, recall, F1.
pub fn hand_table() -> Vec<Hand> {
    let one = q(1, 1);
    let zero = q(0, 1);
    vec![
        Hand {
            counts: [5, 1, 2, 2],
            accuracy: q(7, 10),
            private: [q(5, 6), q(5, 7), q(10, 13)],
            public: [q(1, 2), q(2, 3), q(4, 7)],
            macro_avg: [q(2, 3), q(29, 42), q(61, 91)],
        },
        Hand {
            counts: [3, 0, 0, 7],
            accuracy: one,
            private: [one; 3],
            public: [one; 3],
            macro_avg: [one; 3],
        },
        Hand {
            counts: [0, 4, 6, 0],
            accuracy: zero,
            private: [zero; 3],
            public: [zero; 3],
            macro_avg: [zero; 3],
        },
        Hand {
            // no private items and none predicted
            counts: [0, 0, 0, 5],
            accuracy: one,
            private: [one; 3],
            public: [one; 3],
            macro_avg: [one; 3],
        },
        Hand {
            counts: [0, 3, 0, 2],
            accuracy: q(2, 5),
            private: [zero, zero, zero],
            public: [one, q(2, 5), q(4, 7)],
            macro_avg: [q(1, 2), q(1, 5), q(2, 7)],
        },
        Hand {
            counts: [4, 0, 4, 0],
            accuracy: q(1, 2),
            private: [one, q(1, 2), q(2, 3)],
            public: [zero, zero, zero],
            macro_avg: [q(1, 2), q(1, 4), q(1, 3)],
        },
        Hand {
            counts: [1, 1, 1, 1],
            accuracy: q(1, 2),
            private: [q(1, 2); 3],
            public: [q(1, 2); 3],
            macro_avg: [q(1, 2); 3],
        },
        Hand {
            counts: [10, 5, 3, 12],
            accuracy: q(11, 15),
            private: [q(2, 3), q(10, 13), q(5, 7)],
            public: [q(4, 5), q(12, 17), q(3, 4)],
            macro_avg: [q(11, 15), q(163, 221), q(41, 56)],
        },
        Hand {
            counts: [2, 7, 0, 1],
            accuracy: q(3, 10),
            private: [q(2, 9), one, q(4, 11)],
            public: [one, q(1, 8), q(2, 9)],
            macro_avg: [q(11, 18), q(9, 16), q(29, 99)],
        },
        Hand {
            counts: [6, 2, 0, 0],
            accuracy: q(3, 4),
            private: [q(3, 4), one, q(6, 7)],
            public: [zero, zero, zero],
            macro_avg: [q(3, 8), q(1, 2), q(3, 7)],
        },
    ]
}
