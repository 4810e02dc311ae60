use serde::{Deserialize, Serialize};

use super::{CorpusError, SourceFile, Span};

/// A run of consecutive lines used as a similar-code retrieval candidate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeWindow {
    pub path: String,
    pub start_line: usize,
    pub end_line: usize,
    pub text: String,
}

impl CodeWindow {
    /// Identifier used as the window's index key.
    pub fn id(&self) -> String {
        format!("{}:{:06}-{:06}", self.path, self.start_line, self.end_line)
    }

    pub fn span(&self) -> Span {
        Span::new(self.start_line, self.end_line)
    }
}

/// Splits `file` into windows of `window_size` lines starting every `stride`
/// lines. A window starts at every line `1, 1 + stride, …` up to the last
/// line, so tail windows may be short.
pub fn chunk_windows(file: &SourceFile, window_size: usize, stride: usize) -> Result<Vec<CodeWindow>, CorpusError> {
    if window_size == 0 || stride == 0 || stride > window_size {
        return Err(CorpusError::InvalidWindow { window_size, stride });
    }
    let lines: Vec<&str> = file.text.lines().collect();
    let mut windows = Vec::new();
    let mut start = 0;
    while start < lines.len() {
        let end = (start + window_size).min(lines.len());
        windows.push(CodeWindow {
            path: file.path.clone(),
            start_line: start + 1,
            end_line: end,
            text: lines[start..end].join("\n"),
        });
        start += stride;
    }
    Ok(windows)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn numbered(n: usize) -> SourceFile {
        let text: String = (1..=n).map(|i| format!("line {i}\n")).collect();
        SourceFile::new("f.py", text)
    }

    /// Start lines by direct enumeration: every `1 + j * stride <= n`.
    fn oracle_starts(n: usize, stride: usize) -> Vec<usize> {
        (0..).map(|j| 1 + j * stride).take_while(|&s| s <= n).collect()
    }

    #[test]
    fn ten_lines_window_four_stride_two() {
        let windows = chunk_windows(&numbered(10), 4, 2).unwrap();
        let starts: Vec<_> = windows.iter().map(|w| w.start_line).collect();
        assert_eq!(starts, oracle_starts(10, 2));
        assert_eq!(starts, [1, 3, 5, 7, 9]);
        assert_eq!(windows[0].text, "line 1\nline 2\nline 3\nline 4");
        assert_eq!((windows[4].start_line, windows[4].end_line), (9, 10));
    }

    #[test]
    fn short_file_single_window() {
        let windows = chunk_windows(&numbered(3), 20, 10).unwrap();
        assert_eq!(windows.len(), 1);
        assert_eq!((windows[0].start_line, windows[0].end_line), (1, 3));
    }

    #[test]
    fn empty_file_no_windows() {
        assert!(chunk_windows(&SourceFile::new("e.py", ""), 20, 10).unwrap().is_empty());
    }

    #[test]
    fn invalid_parameters() {
        assert!(chunk_windows(&numbered(3), 0, 1).is_err());
        assert!(chunk_windows(&numbered(3), 4, 5).is_err());
        assert!(chunk_windows(&numbered(3), 4, 0).is_err());
    }

    proptest! {
        #[test]
        fn windows_cover_every_line(n in 0usize..80, size in 1usize..25, stride_frac in 0.0f64..1.0) {
            let stride = 1 + ((size - 1) as f64 * stride_frac) as usize;
            let windows = chunk_windows(&numbered(n), size, stride).unwrap();
            for line in 1..=n {
                prop_assert!(windows.iter().any(|w| w.start_line <= line && line <= w.end_line));
            }
            for w in &windows {
                let len = w.end_line - w.start_line + 1;
                prop_assert!(len == size || w.end_line == n);
            }
            for pair in windows.windows(2) {
                let overlap = pair[0].end_line as isize - pair[1].start_line as isize + 1;
                if pair[0].end_line - pair[0].start_line + 1 == size {
                    prop_assert_eq!(overlap, (size - stride) as isize);
                }
            }
        }
    }
}
