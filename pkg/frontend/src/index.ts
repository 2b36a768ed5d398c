export { BoundaryClient, BoundaryError } from "./boundary.js";
export {
  BoundDistMatrix,
  DistMatrixFunctions,
  add,
  eigen,
  index,
  matmul,
  prcomp,
  print,
  scale,
  seq,
  svd,
  type EigenResult,
  type PrcompOptions,
  type PrcompResult,
  type ScaleResult,
  type SvdResult,
  type Tag,
} from "./distmatrix.js";
