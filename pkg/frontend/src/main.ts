import { EditorApp } from "./app.js";

const app = new EditorApp(document);
void app.init();

// Expose for debugging from the console.
(window as unknown as { splatseg: EditorApp }).splatseg = app;
