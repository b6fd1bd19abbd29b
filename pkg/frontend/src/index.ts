export * from "./rotation.js";
export * from "./api.js";
export * from "./session.js";
export * from "./verify.js";
