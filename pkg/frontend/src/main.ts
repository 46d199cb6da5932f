import { ApiClient } from "./api.js";
import { createApp } from "./app.js";

const params = new URLSearchParams(window.location.search);
const backend = params.get("api") ?? "";
const root = document.getElementById("app");
if (!root) {
  throw new Error("missing #app mount point");
}
createApp(root, new ApiClient(backend), { imageBase: backend });
