/**
 * Trailing-edge debounce with a hard minimum interval between calls.
 * With the default 250 ms interval the wrapped function runs at most
 * 4 times per second no matter how fast events arrive, and the last
 * event in a burst always gets through.
 */
export function debounce<A extends unknown[]>(
  fn: (...args: A) => void,
  intervalMs = 250,
): (...args: A) => void {
  let timer: ReturnType<typeof setTimeout> | null = null;
  let lastRun = -Infinity;
  let pending: A | null = null;

  const flush = () => {
    timer = null;
    if (pending === null) return;
    const args = pending;
    pending = null;
    lastRun = Date.now();
    fn(...args);
  };

  return (...args: A) => {
    pending = args;
    if (timer !== null) return;
    const wait = Math.max(0, lastRun + intervalMs - Date.now());
    timer = setTimeout(flush, wait);
  };
}
