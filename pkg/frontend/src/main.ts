import { ApiClient } from './api.js';
import { ReviewController } from './controller.js';
import { ReviewApp } from './ui.js';

function param(name: string, fallback: string): string {
  return new URLSearchParams(window.location.search).get(name) ?? fallback;
}

const api = new ApiClient(param('api', ''));
const controller = new ReviewController(api, param('reviewer', 'reviewer'));
const app = new ReviewApp(controller);

app.mount('app').catch((error) => {
  const root = document.getElementById('app');
  if (root) root.textContent = `Failed to load review queue: ${error}`;
});
