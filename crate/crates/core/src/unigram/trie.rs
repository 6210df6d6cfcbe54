/// Byte trie over piece strings with dense child tables.
///
/// Pieces are drawn from the 28-character base inventory, so each node keeps
/// a fixed-width child array indexed through `slot`.
#[derive(Debug, Clone)]
pub(crate) struct Trie {
    slot: [u8; 256],
    width: usize,
    children: Vec<u32>,
    terminal: Vec<u32>,
}

const NONE: u32 = u32::MAX;

impl Trie {
    pub fn new<'a>(pieces: impl IntoIterator<Item = &'a str> + Clone) -> Self {
        let mut slot = [u8::MAX; 256];
        let mut width = 0usize;
        for p in pieces.clone() {
            for &b in p.as_bytes() {
                if slot[b as usize] == u8::MAX {
                    slot[b as usize] = width as u8;
                    width += 1;
                }
            }
        }
        let width = width.max(1);
        let mut trie = Self { slot, width, children: vec![NONE; width], terminal: vec![NONE] };
        for (idx, p) in pieces.into_iter().enumerate() {
            let mut node = 0usize;
            for &b in p.as_bytes() {
                let s = trie.slot[b as usize] as usize;
                let child = trie.children[node * width + s];
                node = if child == NONE {
                    let fresh = trie.terminal.len();
                    trie.terminal.push(NONE);
                    trie.children.extend(std::iter::repeat_n(NONE, width));
                    trie.children[node * width + s] = fresh as u32;
                    fresh
                } else {
                    child as usize
                };
            }
            trie.terminal[node] = idx as u32;
        }
        trie
    }

    /// Calls `f(len, piece_index)` for every piece that is a prefix of `text`,
    /// shortest first.
    #[inline]
    pub fn prefixes(&self, text: &[u8], max_len: usize, mut f: impl FnMut(usize, u32)) {
        let mut node = 0usize;
        for (i, &b) in text.iter().take(max_len).enumerate() {
            let s = self.slot[b as usize];
            if s == u8::MAX {
                return;
            }
            let child = self.children[node * self.width + s as usize];
            if child == NONE {
                return;
            }
            node = child as usize;
            if self.terminal[node] != NONE {
                f(i + 1, self.terminal[node]);
            }
        }
    }
}
