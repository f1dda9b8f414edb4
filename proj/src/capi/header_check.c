/* compile-only proof that the public header is plain C */
#include "plateaulab.h"

int plab_header_compiles_as_c(void) { return PLAB_OK; }
