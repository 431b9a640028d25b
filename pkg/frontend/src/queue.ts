/**
 * Single-flight render queue with latest-wins coalescing.
 *
 * At most one request is in flight; while it runs, newer submissions
 * overwrite the pending slot. Every completed response is applied (it is
 * the newest completed), and a newer pending request fires immediately
 * after, so the displayed frame converges to the last submitted input
 * within one round trip.
 */
export class RenderQueue<T, R> {
  private pending: T | undefined;
  private inFlight = false;
  private seq = 0;

  constructor(
    private readonly run: (input: T) => Promise<R>,
    private readonly apply: (input: T, result: R) => void,
    private readonly onError: (err: unknown) => void = () => undefined,
  ) {}

  submit(input: T): void {
    this.pending = input;
    void this.pump();
  }

  get busy(): boolean {
    return this.inFlight || this.pending !== undefined;
  }

  private async pump(): Promise<void> {
    if (this.inFlight || this.pending === undefined) return;
    const input = this.pending;
    this.pending = undefined;
    this.inFlight = true;
    const id = ++this.seq;
    try {
      const result = await this.run(input);
      if (id === this.seq) this.apply(input, result);
    } catch (err) {
      this.onError(err);
    } finally {
      this.inFlight = false;
      void this.pump();
    }
  }
}
