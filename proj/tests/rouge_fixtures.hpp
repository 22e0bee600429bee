#pragma once

// Hand-computed ROUGE expectations (clipped n-gram counts and LCS worked out
// on paper for the short ones, cross-checked with an independent script).
// Shared by the unit suite and the acceptance suite.

namespace poda::test {

struct RougeFixture {
  const char* candidate;
  const char* reference;
  double r1[3];  // P, R, F1
  double r2[3];
  double rl[3];
};

inline const RougeFixture kRougeFixtures[20] = {
    {"the cat sat", "the cat",
     {0.6666666666666666, 1.0, 0.8},
     {0.5, 1.0, 0.6666666666666666},
     {0.6666666666666666, 1.0, 0.8}},
    {"the cat sat on the mat", "the cat sat on the mat",
     {1.0, 1.0, 1.0},
     {1.0, 1.0, 1.0},
     {1.0, 1.0, 1.0}},
    {"a b c d", "e f g h",
     {0.0, 0.0, 0.0},
     {0.0, 0.0, 0.0},
     {0.0, 0.0, 0.0}},
    {"a c b", "a b c",
     {1.0, 1.0, 1.0},
     {0.0, 0.0, 0.0},
     {0.6666666666666666, 0.6666666666666666, 0.6666666666666666}},
    {"police killed the gunman", "police kill the gunman",
     {0.75, 0.75, 0.75},
     {0.3333333333333333, 0.3333333333333333, 0.3333333333333333},
     {0.75, 0.75, 0.75}},
    {"the gunman was killed by police", "police killed the gunman",
     {0.6666666666666666, 1.0, 0.8},
     {0.2, 0.3333333333333333, 0.25},
     {0.3333333333333333, 0.5, 0.4}},
    {"a a a a", "a a",
     {0.5, 1.0, 0.6666666666666666},
     {0.3333333333333333, 1.0, 0.5},
     {0.5, 1.0, 0.6666666666666666}},
    {"a a", "a a a a",
     {1.0, 0.5, 0.6666666666666666},
     {1.0, 0.3333333333333333, 0.5},
     {1.0, 0.5, 0.6666666666666666}},
    {"x", "x",
     {1.0, 1.0, 1.0},
     {0.0, 0.0, 0.0},
     {1.0, 1.0, 1.0}},
    {"w1 w2 w3 w4 w5", "w1 w3 w5",
     {0.6, 1.0, 0.75},
     {0.0, 0.0, 0.0},
     {0.6, 1.0, 0.75}},
    {"to be or not to be", "to be or to be not",
     {1.0, 1.0, 1.0},
     {0.6, 0.6, 0.6},
     {0.8333333333333334, 0.8333333333333334, 0.8333333333333334}},
    {"one two three", "one two three four five six",
     {1.0, 0.5, 0.6666666666666666},
     {1.0, 0.4, 0.5714285714285714},
     {1.0, 0.5, 0.6666666666666666}},
    {"the quick brown fox jumps", "the lazy brown dog jumps",
     {0.6, 0.6, 0.6},
     {0.0, 0.0, 0.0},
     {0.6, 0.6, 0.6}},
    {"b a", "a b",
     {1.0, 1.0, 1.0},
     {0.0, 0.0, 0.0},
     {0.5, 0.5, 0.5}},
    {"repeat repeat repeat other", "repeat other repeat",
     {0.75, 1.0, 0.8571428571428571},
     {0.3333333333333333, 0.5, 0.4},
     {0.5, 0.6666666666666666, 0.5714285714285714}},
    {"alpha beta gamma delta", "alpha gamma beta delta",
     {1.0, 1.0, 1.0},
     {0.0, 0.0, 0.0},
     {0.75, 0.75, 0.75}},
    {"s1 s2", "s2 s1 s3",
     {1.0, 0.6666666666666666, 0.8},
     {0.0, 0.0, 0.0},
     {0.5, 0.3333333333333333, 0.4}},
    {"the the the", "the",
     {0.3333333333333333, 1.0, 0.5},
     {0.0, 0.0, 0.0},
     {0.3333333333333333, 1.0, 0.5}},
    {"m n o p q r", "n o p",
     {0.5, 1.0, 0.6666666666666666},
     {0.4, 1.0, 0.5714285714285714},
     {0.5, 1.0, 0.6666666666666666}},
    {"cats and dogs play", "dogs and cats play",
     {1.0, 1.0, 1.0},
     {0.0, 0.0, 0.0},
     {0.5, 0.5, 0.5}},
};

}  // namespace poda::test
