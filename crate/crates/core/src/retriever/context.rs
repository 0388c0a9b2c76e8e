use crate::pseudogen::PseudoPair;
use crate::SEP;

fn clean(s: &str) -> String {
    s.replace(SEP, " ")
}

/// `post SEP claim SEP pop SEP int SEP out`, each PIO segment a `;`-joined
/// list. Any separator already present in the inputs is blanked out first,
/// so the result always has exactly four separators.
pub fn build_context(post: &str, claim: &str, pop: &[String], int: &[String], out: &[String]) -> String {
    let join = |xs: &[String]| xs.iter().map(|x| clean(x)).collect::<Vec<_>>().join(";");
    [clean(post), clean(claim), join(pop), join(int), join(out)].join(SEP)
}

pub fn pair_context(pair: &PseudoPair) -> String {
    build_context(&pair.pseudo_post, &pair.pseudo_claim, &pair.pop, &pair.int, &pair.out)
}

/// The five segments of a context string.
pub fn split_context(context: &str) -> Vec<&str> {
    context.split(SEP).collect()
}
