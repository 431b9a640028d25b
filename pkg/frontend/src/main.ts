import { ServiceClient } from "./client.js";
import { Viewer, type ViewerElements } from "./viewer.js";

function grab<T extends HTMLElement>(id: string): T {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing #${id}`);
  return el as T;
}

const params = new URLSearchParams(window.location.search);
const serviceUrl = params.get("service") ?? "http://127.0.0.1:8475";

const elements: ViewerElements = {
  frame: grab<HTMLImageElement>("frame"),
  banner: grab("banner"),
  status: grab("status"),
  styleInput: grab<HTMLInputElement>("style-input"),
  retryButton: grab("retry"),
  surface: grab("surface"),
};

const viewer = new Viewer(new ServiceClient(serviceUrl), elements);
void viewer.connect();

declare global {
  interface Window {
    viewer: Viewer;
  }
}
window.viewer = viewer;
