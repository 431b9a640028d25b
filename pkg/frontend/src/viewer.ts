import { MAX_STYLE_BYTES, ServiceClient, ServiceError } from "./client.js";
import { debounce } from "./debounce.js";
import { clampOrbit, orbitLimits, orbitPose, type Pose } from "./pose.js";
import { RenderQueue } from "./queue.js";
import type { OrbitState, SessionInfo } from "./types.js";

export interface ViewerElements {
  frame: HTMLImageElement;
  banner: HTMLElement;
  status: HTMLElement;
  styleInput: HTMLInputElement;
  retryButton: HTMLElement;
  surface: HTMLElement; // drag/scroll capture area
}

const DRAG_DEG_PER_PX = 0.05;
const DOLLY_PER_WHEEL_TICK = 0.004;
const INPUT_DEBOUNCE_MS = 25;

export class Viewer {
  session: SessionInfo | null = null;
  orbit: OrbitState = { azimuthDeg: 0, elevationDeg: 0, dolly: 0 };
  renderCount = 0;
  private queue: RenderQueue<Pose, Blob>;
  private dragging = false;
  private lastX = 0;
  private lastY = 0;
  private objectUrl: string | null = null;
  private readonly requestFrame: ReturnType<typeof debounce<[]>>;

  constructor(readonly client: ServiceClient, readonly el: ViewerElements) {
    this.queue = new RenderQueue(
      (pose) => {
        this.renderCount += 1;
        const [w, h] = this.session ? this.session.resolution : [64, 64];
        return this.client.render(pose, w, h);
      },
      (_pose, blob) => this.showFrame(blob),
      (err) => this.handleRenderError(err),
    );
    this.requestFrame = debounce(() => this.submitCurrentPose(), INPUT_DEBOUNCE_MS);
    this.bindInput();
  }

  async connect(): Promise<void> {
    this.el.banner.hidden = true;
    try {
      this.session = await this.client.session();
    } catch (err) {
      this.el.banner.hidden = false;
      this.el.banner.textContent =
        `Cannot reach render service at ${this.client.baseUrl} — check that ` +
        `\`stylepoint serve\` is running, then retry.`;
      return;
    }
    const limits = orbitLimits(this.session.pivot_depth, this.session.bounds);
    this.el.status.textContent =
      `${this.session.points} points · orbit ≤ ${limits.maxAngleDeg.toFixed(1)}° · ` +
      `dolly ≤ ${limits.maxDolly.toFixed(2)}`;
    this.submitCurrentPose(); // canonical first frame
  }

  /** Current clamped orbit pose; the UI never issues out-of-bounds poses. */
  currentPose(): Pose {
    if (!this.session) throw new Error("not connected");
    const canonical = this.session.canonical_pose;
    this.orbit = clampOrbit(canonical, this.session.pivot_depth, this.orbit,
                            this.session.bounds);
    return orbitPose(canonical, this.session.pivot_depth, this.orbit);
  }

  submitCurrentPose(): void {
    if (!this.session) return;
    this.queue.submit(this.currentPose());
  }

  handleDrag(dx: number, dy: number): void {
    this.orbit.azimuthDeg += dx * DRAG_DEG_PER_PX;
    this.orbit.elevationDeg += dy * DRAG_DEG_PER_PX;
    this.requestFrame();
  }

  handleScroll(deltaY: number): void {
    this.orbit.dolly += deltaY * DOLLY_PER_WHEEL_TICK;
    this.requestFrame();
  }

  async pickStyle(file: File): Promise<void> {
    if (file.size > MAX_STYLE_BYTES) {
      this.flash(`style image too large (limit ${MAX_STYLE_BYTES / 1024 / 1024} MB)`);
      return;
    }
    try {
      const result = await this.client.uploadStyle(file, file.name);
      this.flash(result.cache_hit
        ? `style ${result.style_id} (cache hit)`
        : `style ${result.style_id} applied`);
      this.submitCurrentPose(); // exactly one re-render of the current pose
    } catch (err) {
      this.flash(`style upload failed: ${err instanceof Error ? err.message : err}`);
    }
  }

  private handleRenderError(err: unknown): void {
    if (err instanceof ServiceError && err.status === 422) {
      // server-side bounds are authoritative: snap back and tell the user
      this.orbit = clampOrbit(this.session!.canonical_pose, this.session!.pivot_depth,
                              this.orbit, this.session!.bounds);
      this.flash("pose clamped to session bounds");
      this.submitCurrentPose();
      return;
    }
    this.flash(`render failed: ${err instanceof Error ? err.message : err}`);
  }

  private showFrame(blob: Blob): void {
    if (this.objectUrl) URL.revokeObjectURL(this.objectUrl);
    this.objectUrl = URL.createObjectURL(blob);
    this.el.frame.src = this.objectUrl;
  }

  private flash(message: string): void {
    this.el.status.textContent = message;
  }

  private bindInput(): void {
    const surface = this.el.surface;
    surface.addEventListener("pointerdown", (e) => {
      this.dragging = true;
      this.lastX = (e as PointerEvent).clientX;
      this.lastY = (e as PointerEvent).clientY;
    });
    surface.addEventListener("pointermove", (e) => {
      if (!this.dragging) return;
      const pe = e as PointerEvent;
      this.handleDrag(pe.clientX - this.lastX, pe.clientY - this.lastY);
      this.lastX = pe.clientX;
      this.lastY = pe.clientY;
    });
    surface.addEventListener("pointerup", () => {
      this.dragging = false;
    });
    surface.addEventListener("wheel", (e) => {
      e.preventDefault();
      this.handleScroll((e as WheelEvent).deltaY);
    });
    this.el.retryButton.addEventListener("click", () => void this.connect());
    this.el.styleInput.addEventListener("change", () => {
      const file = this.el.styleInput.files?.[0];
      if (file) void this.pickStyle(file);
    });
  }
}
